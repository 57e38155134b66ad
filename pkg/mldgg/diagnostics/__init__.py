# Diagnostics module for energy scores, JS distance and embedding export
