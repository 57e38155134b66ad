#!/usr/bin/env python3
"""
Meta-learned graph domain generalization

Trains a structure learner and a semantic / variation representation
learner across several source graphs so that a GNN fine-tuned on a few
labeled nodes of an unseen target graph classifies the rest well.

Usage:
    python main.py generate --config run.json
    python main.py train --config run.json
    python main.py eval --config run.json --checkpoint runs/default/checkpoint.json
    python main.py ablate --config run.json --modes Full NoMAML ERM
    python main.py sweep --config run.json --mix 0.0 0.5 1.0
    python main.py rotate --config run.json --set suite=S1T1
    python main.py diagnose --config run.json --checkpoint runs/default/checkpoint.json
    python main.py gradcheck
"""

import sys

from mldgg.cli import main

if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
