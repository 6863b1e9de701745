"""Smoke test for the compiled extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math

import causal_ceo_py as cc

TOY = """\
@pmf
axes (X,1,0,2) (Y,1,1,2)
0,0;0.5
1,1;0.5
@kernel
target (U,1,1,1)
given (Y,1,1)
0,0;1
1,0;1
@kernel
target (Xhat,1,0,1)
given (U,1,1)
0,0;1
@distortion X Xhat
1,0;1
@thresholds
1;0.5
@sizes
1,1;1,1
"""


def main():
    rate, alloc = cc.ceo_rdf(0.0, 1.0, [1.0, 1.0], 0.5)
    assert abs(rate - 1.5 * math.log(2)) < 1e-8, rate
    assert all(abs(d - 2 / 3) < 1e-8 for d in alloc["d_k"])

    rec = cc.rdf_record(0.0, 1.0, [1.0, 1.0], 0.5)
    assert rec["R_direct"] <= rec["R_remote"] <= rec["R_ceo"] <= rec["R_wf"] + 1e-12
    assert abs(rec["loss_lhs"] - rec["loss_rhs"]) < 1e-9

    ss = cc.steady_state(0.5, 1.0, [1.0, 1.0])
    assert abs(ss["s_joint_riccati"] - 0.342330) < 1e-5
    assert abs(ss["s_joint_fusion"] - 0.331612) < 1e-5

    bits = cc.rdf_record(0.0, 1.0, [1.0, 1.0], 0.5, bits=True)
    assert abs(bits["R_ceo"] - 1.5) < 1e-8

    lk = cc.large_k_report(0.0, 1.0, 1.0, 0.5, 64)
    assert abs(lk["limit"] - 0.846574) < 1e-6 and lk["decreasing"]

    sim = cc.simulate(0.0, 1.0, [1.0, 1.0], 0.5, horizon=20000, trials=5, seed=1)
    assert abs(sim["achieved_mse_exact"] - 0.5) < 1e-9
    assert sim["within_4se"]

    bt = cc.bt_eval(TOY)
    assert bt["gamma"] == 0.75
    assert bt["sharp"] >= 1 - bt["epsilon_bound"] - 1e-12

    try:
        cc.rdf_record(0.0, 1.0, [1.0, 1.0], 0.2)
    except ValueError as e:
        assert "infeasible" in str(e)
    else:
        raise AssertionError("infeasible target accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
