# Training module for meta-training, ablations and checkpoints
