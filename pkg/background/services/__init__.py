# Services package for background modeling, scoring and evaluation
