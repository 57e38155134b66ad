# Data module for graphs, synthetic domains and scenarios
