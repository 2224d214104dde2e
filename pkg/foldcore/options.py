import copy


class Options(object):
    """Options to control how folded layers solve and differentiate."""
    def __init__(self, tol=1e-8, max_iter=5000, backward_method='krylov',
                 backward_tol=1e-10, backward_max_iter=5000,
                 krylov_restart=30, rho=1.0, sqp_alpha=0.5,
                 sqp_dual_update='verbatim', fdpg_momentum='frozen',
                 fdpg_frozen_t=100.0, materialize_limit=1e6,
                 custom_layers=None):
        #: Forward solvers stop once successive iterates differ by less
        #  than ``tol`` in the infinity norm, or after ``max_iter`` steps.
        self.tol = tol
        self.max_iter = max_iter
        #: Either 'krylov' or 'lfpi'.  LFPI is the recursion an unrolled
        #  solver performs implicitly; it only converges when the
        #  spectral radius of Phi is below one.
        self.backward_method = backward_method
        self.backward_tol = backward_tol
        self.backward_max_iter = backward_max_iter
        self.krylov_restart = krylov_restart
        #: ADMM penalty parameter.
        self.rho = rho
        self.sqp_alpha = sqp_alpha
        #: 'verbatim' uses lambda+ = alpha * (mu - lambda); 'damped' uses
        #  the common lambda + alpha * (mu - lambda).
        self.sqp_dual_update = sqp_dual_update
        #: 'frozen' folds FDPG with its momentum coefficient evaluated at
        #  ``fdpg_frozen_t``; 'none' folds plain dual proximal gradient.
        self.fdpg_momentum = fdpg_momentum
        self.fdpg_frozen_t = fdpg_frozen_t
        #: Dense Jacobians are only built when n * p stays below this.
        self.materialize_limit = materialize_limit
        #: An instance of a ``registry.Layers`` subclass.  When set, layer
        #  names are looked up there instead of the default table.
        self.custom_layers = custom_layers
        self._validate()

    def _validate(self):
        if self.tol <= 0:
            raise ValueError('tol must be positive, received %r' % self.tol)
        if self.backward_method not in ('krylov', 'lfpi'):
            raise ValueError(
                "backward_method must be 'krylov' or 'lfpi', received %r"
                % self.backward_method)
        if self.sqp_dual_update not in ('verbatim', 'damped'):
            raise ValueError(
                "sqp_dual_update must be 'verbatim' or 'damped', received %r"
                % self.sqp_dual_update)
        if self.fdpg_momentum not in ('frozen', 'none'):
            raise ValueError(
                "fdpg_momentum must be 'frozen' or 'none', received %r"
                % self.fdpg_momentum)
        if self.rho <= 0:
            raise ValueError('rho must be positive, received %r' % self.rho)
        if not 0 < self.sqp_alpha <= 1:
            raise ValueError(
                'sqp_alpha must lie in (0, 1], received %r' % self.sqp_alpha)

    def replace(self, **kwargs):
        new = copy.copy(self)
        for key, value in kwargs.items():
            if not hasattr(new, key):
                raise TypeError('Unknown option: %s' % key)
            setattr(new, key, value)
        new._validate()
        return new

    def as_dict(self):
        snapshot = dict(vars(self))
        custom = snapshot.pop('custom_layers')
        if custom is not None:
            snapshot['custom_layers'] = type(custom).__name__
        return snapshot


DEFAULT_OPTIONS = Options()
