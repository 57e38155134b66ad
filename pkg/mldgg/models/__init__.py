# Models module for the structure learner, GNN and representation learner
