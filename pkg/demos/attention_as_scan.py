"""Causal linear attention computed three ways: the masked matrix, the running
key-value state, and a selective scan with the decay pinned to one.

Run: python3 demos/attention_as_scan.py
"""
import numpy as np

from attnssm import QkvTriple, causal_linear_attention_direct, causal_linear_attention_recurrent
from attnssm.attention import elu_plus_one
from attnssm.ssm import DiscreteSsm, selective_scan

rng = np.random.default_rng(0)
length, width, channels = 12, 4, 3
triple = QkvTriple(rng.standard_normal((length, width)), rng.standard_normal((length, width)),
                   rng.standard_normal((length, channels)))

direct = causal_linear_attention_direct(triple)
recurrent = causal_linear_attention_recurrent(triple)

# Unnormalized attention as an SSM: keys write the state, queries read it, no decay.
q, k = elu_plus_one(triple.Q), elu_plus_one(triple.K)
ssm = DiscreteSsm(A_bar=np.ones((length, channels, width)),
                  B_bar=np.broadcast_to(k[:, None, :], (length, channels, width)).copy())
numerator, _ = selective_scan(ssm, q, np.zeros(channels), triple.V)
denominator = np.cumsum(k, axis=0)
as_scan = numerator / np.einsum("ld,ld->l", q, denominator)[:, None]

print("max |direct - recurrent| =", np.abs(direct - recurrent).max())
print("max |direct - scan|      =", np.abs(direct - as_scan).max())
