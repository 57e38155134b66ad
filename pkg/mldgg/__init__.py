# MLDGG: meta-learned graph domain generalization
