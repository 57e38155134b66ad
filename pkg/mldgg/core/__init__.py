# Core numerics, randomness and gradient checking
