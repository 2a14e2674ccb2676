"""Triple-loop metric implementations written straight from the definitions (mm)."""

import math


def _err(pred, gt, j, p, t, hip=None):
    s = 0.0
    for k in range(3):
        a, b = pred[3 * j + k, p, t], gt[3 * j + k, p, t]
        if hip is not None:
            a -= pred[3 * hip + k, p, t]
            b -= gt[3 * hip + k, p, t]
        s += (a - b) ** 2
    return s


def loop_mpjpe(pred, gt):
    J3, P, T = gt.shape
    tot = 0.0
    for p in range(P):
        for t in range(T):
            for j in range(J3 // 3):
                tot += math.sqrt(_err(pred, gt, j, p, t))
    return 1000 * tot / (P * T * (J3 // 3))


def loop_vim(pred, gt, t):
    J3, P, _ = gt.shape
    tot = 0.0
    for p in range(P):
        tot += math.sqrt(sum(_err(pred, gt, j, p, t - 1) for j in range(J3 // 3)))
    return 1000 * tot / P


def loop_jpe(pred, gt, t, hip=None):
    J3, P, _ = gt.shape
    tot = 0.0
    for p in range(P):
        for j in range(J3 // 3):
            tot += math.sqrt(_err(pred, gt, j, p, t - 1, hip))
    return 1000 * tot / (P * (J3 // 3))


def loop_ape(pred, gt, t, hip):
    return loop_jpe(pred, gt, t, hip)


def loop_fde(pred, gt, t, hip):
    _, P, _ = gt.shape
    return 1000 * sum(math.sqrt(_err(pred, gt, hip, p, t - 1)) for p in range(P)) / P


def loop_fde_literal(pred, gt, t, hip):
    """Double sum over persons and joints of the hip distance, with the 1/(P*J) factor."""
    J3, P, _ = gt.shape
    J = J3 // 3
    tot = 0.0
    for p in range(P):
        for _j in range(J):
            tot += math.sqrt(_err(pred, gt, hip, p, t - 1))
    return 1000 * tot / (P * J)
