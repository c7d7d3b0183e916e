# Memory module
