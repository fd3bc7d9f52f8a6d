"""Small planar/spatial geometry helpers shared across modules."""

import numpy as np


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    w = np.mod(-np.asarray(a) + np.pi, 2.0 * np.pi)
    return -(w - np.pi) if np.ndim(a) else float(-(w - np.pi))


def rot2(theta):
    """2x2 rotation matrix."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotz(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def roty(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotx(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def pose2_compose(a, b):
    """Compose planar poses a*b, both (x, y, theta)."""
    ax, ay, ath = a
    bx, by, bth = b
    c, s = np.cos(ath), np.sin(ath)
    return (ax + c * bx - s * by, ay + s * bx + c * by, wrap_angle(ath + bth))


def pose2_between(a, b):
    """Relative pose d with a*d = b."""
    ax, ay, ath = a
    bx, by, bth = b
    c, s = np.cos(ath), np.sin(ath)
    dx, dy = bx - ax, by - ay
    return (c * dx + s * dy, -s * dx + c * dy, wrap_angle(bth - ath))


def integrate_arc(pose, vx, vy, omega, dt):
    """Exact integration of a constant body twist over dt (planar).

    Avoids first-order Euler drift on turning arcs; reduces to a straight
    step when |omega| is negligible.
    """
    x, y, th = pose
    if abs(omega) < 1e-9:
        c, s = np.cos(th), np.sin(th)
        return (x + (c * vx - s * vy) * dt, y + (s * vx + c * vy) * dt,
                wrap_angle(th + omega * dt))
    th1 = th + omega * dt
    s0, c0 = np.sin(th), np.cos(th)
    s1, c1 = np.sin(th1), np.cos(th1)
    dx = (vx * (s1 - s0) + vy * (c1 - c0)) / omega
    dy = (vx * (c0 - c1) + vy * (s1 - s0)) / omega
    return (x + dx, y + dy, wrap_angle(th1))


def solve3(A, b):
    """Solve a 3x3 system with explicit cofactors.

    Used in per-tick twist reconstruction; keeps the simulation free of
    LAPACK round-off variation between builds.
    """
    a = np.asarray(A, dtype=float)
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    if abs(det) < 1e-12:
        raise np.linalg.LinAlgError("singular 3x3 system")
    inv = np.empty((3, 3))
    inv[0, 0] = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    inv[0, 1] = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
    inv[0, 2] = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    inv[1, 0] = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    inv[1, 1] = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
    inv[1, 2] = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
    inv[2, 0] = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    inv[2, 1] = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
    inv[2, 2] = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return inv @ np.asarray(b, dtype=float) / det
