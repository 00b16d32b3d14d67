import numpy as np


class SyntheticModel:
    """Closed-form stiffness model with three classes, used to test the
    optimizer independently of any fitted surrogate.

    Y(rho, z) = scale * rho^3 * [1 + z1^2 / 2, 0.3, 1 + z2^2 / 2, 0.35 + z1 z2 / 10]
    """

    levels = [1, 2, 3]

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    @property
    def anchors(self) -> np.ndarray:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    def predict_many(self, rho, z, grad=True):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        z1, z2 = z[:, 0], z[:, 1]

        base = np.stack(
            [1 + 0.5 * z1**2, np.full_like(z1, 0.3), 1 + 0.5 * z2**2, 0.35 + 0.1 * z1 * z2],
            axis=1,
        )
        r3 = self.scale * rho[:, None] ** 3
        Y = r3 * base
        if not grad:
            return Y, None, None

        dY_drho = self.scale * 3 * rho[:, None] ** 2 * base
        dbase = np.zeros((len(rho), 4, 2))
        dbase[:, 0, 0] = z1
        dbase[:, 2, 1] = z2
        dbase[:, 3, 0] = 0.1 * z2
        dbase[:, 3, 1] = 0.1 * z1
        return Y, dY_drho, r3[:, :, None] * dbase
