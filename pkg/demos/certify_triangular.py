"""Triangularize a constant-T, diagonal-LB pair and certify (MPpos)."""
import numpy as np

from persistlab import structure as S
from persistlab.errors import PersistlabError
from persistlab.cli import CERT_CASES, certify_config

for name in ("lbt_case_i", "lbt_case_ii", "lbt_case_iii", "block_violation"):
    cfg = CERT_CASES[name]
    try:
        cert = certify_config(cfg)
        print(f"{name:16s} certified={cert['certified']}")
    except PersistlabError as exc:
        print(f"{name:16s} rejected: {exc}")

# the flip P = diag(1, -1) turns a competitive 2x2 block system cooperative
G = np.array([[1.0, -4.0], [-3.0, 1.0]])
P, Gb, cls = S.competitive_transform(G, (1, 1))
print("P G P =\n", Gb, "\ncooperative:", cls.cooperative)
