# Reports module
