"""Independent global weak-form evaluator used as a test oracle.

All ten fields (s included) are unknowns; the residual is written equation
by equation with explicit loops over elements, faces and quadrature
points.  Interior equations use the integrated-by-parts forms, which the
solver does not.  The Jacobian comes from complex-step differentiation.
"""
from __future__ import annotations

import numpy as np
from scipy.special import roots_legendre


def lagrange(nodes, x):
    """1D Lagrange basis values and derivatives at a scalar (possibly complex-free) point."""
    m = len(nodes)
    v = np.ones(m)
    d = np.zeros(m)
    for i in range(m):
        for j in range(m):
            if j != i:
                v[i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
        s = 0.0
        for l in range(m):
            if l == i:
                continue
            t = 1.0 / (nodes[i] - nodes[l])
            for j in range(m):
                if j != i and j != l:
                    t *= (x - nodes[j]) / (nodes[i] - nodes[j])
            s += t
        d[i] = s
    return v, d


class Monolithic:
    FIELDS_S = ("phi", "psi", "mu")
    FIELDS_V = ("r", "q", "p", "s")

    def __init__(self, mesh, k, coupling, eps, taus, dt, mobility, nq=None):
        self.mesh, self.k = mesh, k
        self.coupling = coupling
        self.eps, self.dt = eps, dt
        self.t1, self.t2, self.t3, self.t4 = taus
        self.mobility = mobility  # callable M(phi) or None for M = 1
        self.nodes = np.linspace(0, 1, k + 1)
        nq = nq or k + 3
        x, w = roots_legendre(nq)
        self.gp, self.gw = 0.5 * (x + 1), 0.5 * w
        self.nb = (k + 1) ** 2
        self.ne = mesh.n_elements
        self.nel = 11 * self.nb
        # trace numbering
        nf = mesh.n_faces
        if coupling == "hdg":
            self.trace = np.arange(nf * (k + 1)).reshape(nf, k + 1)
            self.ntr = nf * (k + 1)
        else:
            nv = mesh.n_vertices
            tr = np.zeros((nf, k + 1), dtype=int)
            for f in range(nf):
                tr[f, 0], tr[f, k] = mesh.face_vertices[f]
                for a in range(1, k):
                    tr[f, a] = nv + f * (k - 1) + a - 1
            self.trace = tr
            self.ntr = nv + nf * (k - 1)
        self.n = self.ne * self.nel + 3 * self.ntr
        self._tab()

    def _tab(self):
        k, nb = self.k, self.nb
        pts = []
        for b, yq in enumerate(self.gp):
            for a, xq in enumerate(self.gp):
                vx, dx = lagrange(self.nodes, xq)
                vy, dy = lagrange(self.nodes, yq)
                val = np.array([vx[i % (k + 1)] * vy[i // (k + 1)] for i in range(nb)])
                gx = np.array([dx[i % (k + 1)] * vy[i // (k + 1)] for i in range(nb)])
                gy = np.array([vx[i % (k + 1)] * dy[i // (k + 1)] for i in range(nb)])
                pts.append((xq, yq, self.gw[a] * self.gw[b], val, gx, gy))
        self.vol = pts
        # facet tables: local face -> list of (weight, volume basis, facet basis)
        self.fac = {}
        for lf in range(4):
            rows = []
            for s, w in zip(self.gp, self.gw):
                xi, eta = {0: (0.0, s), 1: (1.0, s), 2: (s, 0.0), 3: (s, 1.0)}[lf]
                vx, _ = lagrange(self.nodes, xi)
                vy, _ = lagrange(self.nodes, eta)
                val = np.array([vx[i % (k + 1)] * vy[i // (k + 1)] for i in range(nb)])
                lam, _ = lagrange(self.nodes, s)
                rows.append((w, val, lam))
            self.fac[lf] = rows

    # layout ------------------------------------------------------------
    def elem_slice(self, e):
        return slice(e * self.nel, (e + 1) * self.nel)

    def unpack(self, x):
        nb = self.nb
        E = x[: self.ne * self.nel].reshape(self.ne, self.nel)
        out = {}
        for i, n in enumerate(self.FIELDS_S):
            out[n] = E[:, i * nb:(i + 1) * nb]
        for j, n in enumerate(self.FIELDS_V):
            o = 3 * nb + 2 * j * nb
            out[n] = E[:, o:o + 2 * nb].reshape(self.ne, 2, nb)
        o = self.ne * self.nel
        out["phibar"] = x[o:o + self.ntr]
        out["psibar"] = x[o + self.ntr:o + 2 * self.ntr]
        out["mubar"] = x[o + 2 * self.ntr:]
        return out

    def pack(self, st, dtype=float):
        x = np.zeros(self.n, dtype=dtype)
        nb = self.nb
        E = x[: self.ne * self.nel].reshape(self.ne, self.nel)
        for i, n in enumerate(self.FIELDS_S):
            E[:, i * nb:(i + 1) * nb] = getattr(st, n)
        for j, n in enumerate(self.FIELDS_V):
            o = 3 * nb + 2 * j * nb
            E[:, o:o + 2 * nb] = getattr(st, n).reshape(self.ne, 2 * nb)
        o = self.ne * self.nel
        x[o:o + self.ntr] = st.phibar
        x[o + self.ntr:o + 2 * self.ntr] = st.psibar
        x[o + 2 * self.ntr:] = st.mubar
        return x

    # residual ----------------------------------------------------------
    def residual(self, x, phi_old, psi_old, source=None):
        mesh, nb = self.mesh, self.nb
        hx, hy = mesh.hx, mesh.hy
        U = self.unpack(x)
        R = np.zeros(self.n, dtype=x.dtype)
        RE = R[: self.ne * self.nel].reshape(self.ne, self.nel)
        o = self.ne * self.nel
        Rpb = R[o:o + self.ntr]
        Rsb = R[o + self.ntr:o + 2 * self.ntr]
        Rmb = R[o + 2 * self.ntr:]
        corners = mesh.element_corners()
        normals = {0: (-1.0, 0.0), 1: (1.0, 0.0), 2: (0.0, -1.0), 3: (0.0, 1.0)}

        for e in range(self.ne):
            phi, psi, mu = U["phi"][e], U["psi"][e], U["mu"][e]
            r, q, p, s = U["r"][e], U["q"][e], U["p"][e], U["s"][e]
            rr = {n: np.zeros(nb, dtype=x.dtype) for n in ("phi", "psi", "mu")}
            rv = {n: np.zeros((2, nb), dtype=x.dtype) for n in ("r", "q", "p", "s")}
            for xq, yq, w, val, gx, gy in self.vol:
                J = hx * hy * w
                g = np.array([gx / hx, gy / hy])
                ph = val @ phi
                ps = val @ psi
                m_ = val @ mu
                gph = g @ phi
                gps = g @ psi
                gmu = g @ mu
                rq, qq, pq, sq = r @ val, q @ val, p @ val, s @ val
                pho = val @ phi_old[e]
                pso = val @ psi_old[e]
                M = 1.0 if self.mobility is None else self.mobility(pho)
                rv["r"] += J * np.outer(rq + gph, val)
                rv["q"] += J * np.outer(qq + gps, val)
                rv["p"] += J * np.outer(pq + gmu, val)
                rv["s"] += J * np.outer(sq - M * pq, val)
                rr["phi"] += J * (ps * val - rq @ g)
                fph = ph**3 + (1 - self.eps) * ph
                rr["psi"] += J * ((m_ - fph - 2 * pso) * val - qq @ g)
                gsrc = 0.0
                if source is not None:
                    gsrc = source(corners[e, 0] + hx * xq, corners[e, 1] + hy * yq)
                rr["mu"] += J * (((ph - pho) / self.dt - gsrc) * val - sq @ g)
            for lf in range(4):
                f = mesh.element_faces[e, lf]
                n = np.array(normals[lf])
                Lf = hy if lf < 2 else hx
                idx = self.trace[f]
                for w, val, lam in self.fac[lf]:
                    J = Lf * w
                    ph, ps, m_ = val @ phi, val @ psi, val @ mu
                    pb = lam @ U["phibar"][idx]
                    sb = lam @ U["psibar"][idx]
                    mb = lam @ U["mubar"][idx]
                    rn = n @ (r @ val)
                    qn = n @ (q @ val)
                    sn = n @ (s @ val)
                    rhat = rn + self.t1 * (ph - pb)
                    qhat = qn + self.t2 * (ps - sb) - self.t4 * (ph - pb)
                    shat = sn + self.t3 * (m_ - mb)
                    rv["r"] += J * (pb - ph) * np.outer(n, val)
                    rv["q"] += J * (sb - ps) * np.outer(n, val)
                    rv["p"] += J * (mb - m_) * np.outer(n, val)
                    rr["phi"] += J * rhat * val
                    rr["psi"] += J * qhat * val
                    rr["mu"] += J * shat * val
                    np.add.at(Rpb, idx, J * rhat * lam)
                    np.add.at(Rsb, idx, J * qhat * lam)
                    np.add.at(Rmb, idx, J * shat * lam)
            for i, nm in enumerate(self.FIELDS_S):
                RE[e, i * nb:(i + 1) * nb] = rr[nm]
            for j, nm in enumerate(self.FIELDS_V):
                o2 = 3 * nb + 2 * j * nb
                RE[e, o2:o2 + 2 * nb] = rv[nm].reshape(-1)
        return R

    def jacobian(self, x, phi_old, psi_old, h=1e-30):
        J = np.empty((self.n, self.n))
        xc = x.astype(complex)
        for j in range(self.n):
            xc[j] += 1j * h
            J[:, j] = self.residual(xc, phi_old, psi_old).imag / h
            xc[j] -= 1j * h
        return J

    def newton_step(self, x, phi_old, psi_old, source=None):
        R = self.residual(x, phi_old, psi_old, source)
        J = self.jacobian(x, phi_old, psi_old)
        return np.linalg.solve(J, -R), R, J
