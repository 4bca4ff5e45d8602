"""Assemble an adversarial-imitation discriminator without training.

The discriminator that is optimal against the extracted policy has the closed
form rho_star / (rho_star + rho_e). Because rho_star = rho_o * alpha * y and
the density discriminator encodes rho_e / rho_o through its odds, that object
can be assembled purely algebraically from pieces the offline phase already
produced:

    D0(s, a) = 1 / (1 + [d/(1-d)] * 1/(alpha * y))

No dataset access, no gradient steps: stitching is a constant-time formula.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import EmpiricalDistribution
from .reward import DensityDiscriminator, ParametricDiscriminator


@dataclass(frozen=True)
class StitchedDiscriminator:
    d_part: object
    y_part: np.ndarray
    alpha: float = 1.0
    trainable: bool = True

    def __post_init__(self):
        y = np.asarray(self.y_part, dtype=np.float64)
        object.__setattr__(self, "y_part", y)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if np.any(y <= 0):
            raise ValueError("y must be strictly positive")

    def _d_table(self) -> np.ndarray:
        return self.d_part.table()

    def table(self) -> np.ndarray:
        """Materialized D0 values, strictly inside (0, 1)."""
        d = self._d_table()
        odds = d / (1.0 - d)
        return 1.0 / (1.0 + odds / (self.alpha * self.y_part))

    def logits(self) -> np.ndarray:
        """log(D0 / (1 - D0)) = log(alpha y) - logit(d): the trainable surface."""
        d = self._d_table()
        return np.log(self.alpha * self.y_part) - np.log(d / (1.0 - d))

    def to_json(self) -> str:
        d = self.d_part
        if isinstance(d, DensityDiscriminator):
            d_doc = {"kind": "tabular", "values": d.values.tolist(),
                     "defined": d.defined_mask.tolist(), "clip": list(d.clip_bounds)}
        elif isinstance(d, ParametricDiscriminator):
            d_doc = {"kind": "parametric", "net": d.net.to_dict(),
                     "n_states": d.n_states, "n_actions": d.n_actions,
                     "clip": list(d.clip_bounds)}
        else:
            raise TypeError(f"cannot serialize d part of type {type(d).__name__}")
        return json.dumps({"d": d_doc, "y": self.y_part.tolist(), "alpha": self.alpha,
                           "trainable": self.trainable})

    @staticmethod
    def from_json(text: str) -> "StitchedDiscriminator":
        from .nn import Mlp
        doc = json.loads(text)
        d_doc = doc["d"]
        if d_doc["kind"] == "tabular":
            d = DensityDiscriminator(values=np.asarray(d_doc["values"]),
                                     defined_mask=np.asarray(d_doc["defined"], dtype=bool),
                                     clip_bounds=tuple(d_doc["clip"]))
        else:
            d = ParametricDiscriminator(net=Mlp.from_dict(d_doc["net"]),
                                        n_states=d_doc["n_states"],
                                        n_actions=d_doc["n_actions"],
                                        clip_bounds=tuple(d_doc["clip"]))
        return StitchedDiscriminator(d_part=d, y_part=np.asarray(doc["y"]),
                                     alpha=doc["alpha"], trainable=doc["trainable"])


def stitch_discriminator(d, y, alpha: float = 1.0,
                         trainable: bool = True) -> StitchedDiscriminator:
    """Wrap (d, y, alpha) into the stitched evaluator; no data, no training."""
    return StitchedDiscriminator(d_part=d, y_part=np.asarray(y, dtype=np.float64),
                                 alpha=alpha, trainable=trainable)


def verify_alignment(stitched: StitchedDiscriminator,
                     rho_e: EmpiricalDistribution | np.ndarray,
                     rho_o: EmpiricalDistribution | np.ndarray,
                     y_star: np.ndarray | None = None) -> float:
    """Max deviation of the stitched table from rho*/(rho* + rho_e).

    rho* is formed directly as rho_o * alpha * y, so this measures how far the
    algebraic stitching is from the discriminator it is supposed to equal,
    over the joint support of both distributions.
    """
    e = rho_e.probs if isinstance(rho_e, EmpiricalDistribution) else np.asarray(rho_e)
    o = rho_o.probs if isinstance(rho_o, EmpiricalDistribution) else np.asarray(rho_o)
    y = stitched.y_part if y_star is None else np.asarray(y_star)
    rho_star = o * stitched.alpha * y
    support = (e > 0) & (o > 0)
    direct = rho_star[support] / (rho_star[support] + e[support])
    return float(np.max(np.abs(stitched.table()[support] - direct)))
