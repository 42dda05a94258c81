# Test package for ion-saturation
