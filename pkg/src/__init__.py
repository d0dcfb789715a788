"""
Contractive auto-encoders with Jacobian-chain sampling

A desk-scale toolkit that provides:
- Single-layer and stacked contractive auto-encoders with exact gradients
- Markov chain sampling driven by the encoder Jacobian
- Parzen log-likelihood, affine sensitivity and linear-probe evaluation
"""

__version__ = "0.1.0"
