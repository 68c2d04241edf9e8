"""Record reference estimates for the toy fixture using semopy.

Run once from the repository root:

    python3 scripts/semopy_reference.py

semopy scales its chi-square by the `n_samples` it is given, so the sample
covariance (n - 1 denominator) is passed with n_samples = n - 1. That makes
chi2 = (n - 1) F_ML and the observed-information SEs match lvsem's
conventions. semopy's RMSEA divides by n_samples - 1, so it is evaluated
with n_samples = n.
"""

import json
import sys

import numpy as np
import pandas as pd
import semopy
from semopy import stats

MODEL = "fixtures/toy_dck_eck.model"
DATA = "fixtures/toy_reference.csv"
OUT = "fixtures/toy_reference.semopy.json"


def label(lval, op, rval):
    # lvsem writes loadings as `latent=~indicator`; semopy lists them as
    # `indicator ~ latent`.
    if op == "~":
        return f"{rval}=~{lval}"
    return f"{lval}{op}{rval}"


def main():
    desc = open(MODEL, encoding="utf-8").read()
    scores = pd.read_csv(DATA).drop(columns=["model"])
    n = len(scores)
    cov = scores.cov(ddof=1)

    model = semopy.Model(desc)
    result = model.fit(
        cov=cov, n_samples=n - 1, obj="MLW", options={"ftol": 1e-14, "maxiter": 10000}
    )
    if not result.success:
        sys.exit(f"semopy fit failed: {result}")

    table = model.inspect(information="observed")
    params = {}
    for _, row in table.iterrows():
        se = row["Std. Err"]
        params[label(row["lval"], row["op"], row["rval"])] = {
            "estimate": float(row["Estimate"]),
            "se": None if se == "-" else float(se),
        }

    dof = stats.calc_dof(model)
    chi2, pvalue = stats.calc_chi2(model, dof)
    cfi = stats.calc_cfi(model, dof, chi2)
    model.n_samples = n
    rmsea = stats.calc_rmsea(model, chi2, dof)

    record = {
        "generator": f"semopy {semopy.__version__}",
        "objective": "MLW",
        "model": MODEL,
        "data": DATA,
        "n": n,
        "fmin": float(result.fun),
        "chi2": float(chi2),
        "df": int(dof),
        "pvalue": float(pvalue),
        "cfi": float(cfi),
        "rmsea": float(rmsea),
        "parameters": params,
    }
    with open(OUT, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)
        f.write("\n")
    print(json.dumps(record, indent=2))


if __name__ == "__main__":
    np.set_printoptions(precision=10)
    main()
