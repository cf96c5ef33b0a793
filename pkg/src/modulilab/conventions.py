"""Normalization table for the discrete conformal calculus.

Every constant that enters an inner product, a Hodge star, or a wedge
integral is fixed here once, so that no formula in the variation module
can drift against another.  The table:

* local coordinate dz = dx + i dy, positively oriented charts;
* star dz = -i dz, star dzbar = +i dzbar (so star^2 = -1 on 1-forms);
* on (1,1)-forms, star divides the dzbar^dz coefficient by the area
  density: c -> 2i c / rho, so the volume form rho dx^dy maps to 1;
* volume form rho dx^dy; all L2 pairings carry a global factor 2
  relative to that volume, i.e. <1,1> on functions is 2*rho-area and
  <dzbar,dzbar> = 2/rho.  With this choice the assembled adjoint of
  dbar is the discretization of -rho^{-1} d on (0,1)-coefficients;
* wedge integration maps the dzbar^dz coefficient on a face to
  2*Area_f, which equals (-i) times the geometric integral of
  dzbar^dz = 2i dx^dy.  Hence i * wedge_trace_integrate(a, star(conj(a)^T))
  reproduces ip_form(a, a) exactly;
* Beltrami differentials pair with weight rho*Area_f per face;
* `ad_star` is the exact formal adjoint of the pointwise commutator
  action; under the weights above it equals -rho^{-1}[alpha, conj(nu)^T]
  averaged onto vertices, i.e. the calibration constant is -1 relative
  to the raw commutator with conj(nu)^T.
"""

from __future__ import annotations

import hashlib
import json

STAR_DZ = -1j
STAR_DZBAR = 1j

#: wedge_trace_integrate sends the per-face dzbar^dz coefficient to this
#: multiple of the chart area.
WEDGE_AREA_FACTOR = 2.0

#: global factor on every L2 weight relative to the rho dx^dy volume.
L2_GLOBAL_FACTOR = 2.0

#: ad_star(nu, .) = AD_STAR_CALIBRATION * rho^{-1} [., conj(nu)^T], vertex-averaged.
AD_STAR_CALIBRATION = -1.0

#: the gauge-Hessian source keeps the derivation constant +1 on
#: rho^{-1}([nu1, conj(nu2)^T] - (d mu1) conj(nu2)^T - conj(d mu2) nu1).
GAUGE_SOURCE_CALIBRATION = 1.0


def digest(density_policy: str = "unspecified", **extra: object) -> dict:
    """Conventions record embedded in every report."""
    d = {
        "star_dz": "-i",
        "star_dzbar": "+i",
        "wedge_area_factor": WEDGE_AREA_FACTOR,
        "l2_global_factor": L2_GLOBAL_FACTOR,
        "ad_star_calibration": AD_STAR_CALIBRATION,
        "gauge_source_calibration": GAUGE_SOURCE_CALIBRATION,
        "scalar_weight": "2 * rho * area / 3 per corner",
        "form_weight": "2 * area",
        "beltrami_weight": "rho * area",
        "variation_laplacian": "symmetrized (dbar*dbar + d*d)/2, kernel-restricted",
        "mu4_terms": "exact Hermitian mirrors of the mu3 terms",
        "density_policy": density_policy,
    }
    d.update(extra)
    return d


def digest_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
