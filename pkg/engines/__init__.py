# Engines module
