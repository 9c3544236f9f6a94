"""Deliberately naive reference implementations used to cross-check the
vectorized library code. Slow, obvious and independent of miaudit."""

from fractions import Fraction


def pairwise_auc(members, nonmembers):
    """P(member > non-member) + P(tie) / 2 by enumerating every pair."""
    wins = Fraction(0)
    for m in members:
        for n in nonmembers:
            if m > n:
                wins += 1
            elif m == n:
                wins += Fraction(1, 2)
    return wins / (len(members) * len(nonmembers))


def brute_roc_points(members, nonmembers):
    """(fpr, tpr) at every candidate threshold, membership = score > tau."""
    taus = sorted(set(members) | set(nonmembers), reverse=True) + [float('-inf')]
    pts = []
    for tau in taus:
        tp = sum(1 for m in members if m > tau)
        fp = sum(1 for n in nonmembers if n > tau)
        pts.append((Fraction(fp, len(nonmembers)), Fraction(tp, len(members))))
    return pts


def brute_tpr_at_fpr(members, nonmembers, alpha):
    """Best TPR over every threshold whose FPR does not exceed alpha."""
    return max(t for f, t in brute_roc_points(members, nonmembers) if f <= Fraction(alpha))


def empirical_fpr(out_scores, tau):
    return Fraction(sum(1 for s in out_scores if s > tau), len(out_scores))


def smallest_valid_threshold(out_scores, alpha):
    """Exhaustive: the least candidate tau (among the scores) with FPR <= alpha."""
    ok = [t for t in sorted(set(out_scores)) if empirical_fpr(out_scores, t) <= Fraction(alpha)]
    return ok[0]


def central_difference(f, theta, h=1e-5):
    import numpy as np
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g
