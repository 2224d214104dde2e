class FoldcoreError(ValueError):
    pass


class NonFiniteError(FoldcoreError):
    def __init__(self, where):
        super(NonFiniteError, self).__init__(where)
        self.where = where

    def __str__(self):
        return 'Non-finite value encountered in %s' % self.where


class ShapeMismatch(FoldcoreError):
    def __init__(self, name, expected, actual):
        super(ShapeMismatch, self).__init__(name, expected, actual)
        self.name = name
        self.expected = expected
        self.actual = actual

    def __str__(self):
        return 'Shape mismatch for %s: expected %s, received %s' % (
            self.name, self.expected, self.actual)


class SingularMatrix(FoldcoreError):
    _ERROR_MESSAGE = 'Matrix is singular to working precision'

    def __init__(self, pivot_index, pivot, msg=_ERROR_MESSAGE):
        super(SingularMatrix, self).__init__(pivot_index, pivot)
        self.pivot_index = pivot_index
        self.pivot = pivot
        self.msg = msg

    def __str__(self):
        return '%s: pivot %s has magnitude %.3e' % (
            self.msg, self.pivot_index, abs(self.pivot))


class SingularKkt(SingularMatrix):
    def __init__(self, pivot_index, pivot):
        super(SingularKkt, self).__init__(
            pivot_index, pivot, msg='KKT matrix of the ADMM step is singular')


class SingularSystem(SingularMatrix):
    def __init__(self, pivot_index, pivot, rho_estimate=None):
        super(SingularSystem, self).__init__(
            pivot_index, pivot,
            msg='Differential fixed-point system (I - Phi) is singular')
        self.rho_estimate = rho_estimate

    def __str__(self):
        text = super(SingularSystem, self).__str__()
        if self.rho_estimate is not None:
            text += ' (estimated spectral radius of Phi: %.6g)' % (
                self.rho_estimate)
        return text


class NoConvergence(FoldcoreError):
    def __init__(self, what, report, iterations=None):
        super(NoConvergence, self).__init__(what, report)
        self.what = what
        # Either a full report object or, for scalar estimators, the
        # last estimate.  Callers may still use it.
        self.report = report
        self.iterations = iterations

    def __str__(self):
        if self.iterations is None:
            return '%s did not converge' % self.what
        return '%s did not converge after %s iterations' % (
            self.what, self.iterations)


class Divergence(FoldcoreError):
    def __init__(self, iteration, norm, rho_estimate=None):
        super(Divergence, self).__init__(iteration, norm)
        self.iteration = iteration
        self.norm = norm
        self.rho_estimate = rho_estimate

    def __str__(self):
        text = ('Linear fixed-point iteration diverged at iteration %s '
                '(norm %.3e)' % (self.iteration, self.norm))
        if self.rho_estimate is not None:
            text += ', estimated spectral radius %.6g' % self.rho_estimate
        return text


class Breakdown(FoldcoreError):
    def __init__(self, iteration, norm):
        super(Breakdown, self).__init__(iteration, norm)
        self.iteration = iteration
        self.norm = norm

    def __str__(self):
        return ('Krylov basis breakdown at iteration %s: basis vector norm '
                '%.3e with unconverged residual' % (self.iteration, self.norm))


class InsufficientData(FoldcoreError):
    def __init__(self, count, required=5):
        super(InsufficientData, self).__init__(count)
        self.count = count
        self.required = required

    def __str__(self):
        return ('Rate estimation needs at least %s positive residuals, '
                'received %s' % (self.required, self.count))


class NonFiniteProbe(FoldcoreError):
    def __init__(self, index):
        super(NonFiniteProbe, self).__init__(index)
        self.index = index

    def __str__(self):
        return 'Finite-difference probe %s evaluated to a non-finite value' % (
            self.index,)


class TooLarge(FoldcoreError):
    def __init__(self, size, limit):
        super(TooLarge, self).__init__(size, limit)
        self.size = size
        self.limit = limit

    def __str__(self):
        return 'Refusing to materialize %d entries (limit %d)' % (
            self.size, self.limit)


class DegenerateFreeSet(FoldcoreError):
    def __init__(self):
        super(DegenerateFreeSet, self).__init__(
            'Capped-simplex projection has no free coordinate; '
            'its Jacobian is undefined at this point.')


class NonFiniteGradient(FoldcoreError):
    def __init__(self, where='objective gradient'):
        super(NonFiniteGradient, self).__init__(where)
        self.where = where

    def __str__(self):
        return 'Non-finite %s' % self.where


class SubproblemInfeasible(FoldcoreError):
    def __init__(self, residual):
        super(SubproblemInfeasible, self).__init__(residual)
        self.residual = residual

    def __str__(self):
        return ('SQP subproblem is infeasible: constraint residual %.3e '
                'after the inner solve' % self.residual)


class NotAFixedPoint(FoldcoreError):
    def __init__(self, residual, limit):
        super(NotAFixedPoint, self).__init__(residual, limit)
        self.residual = residual
        self.limit = limit

    def __str__(self):
        return ('State is not a fixed point of the update step: residual '
                '%.3e exceeds %.3e' % (self.residual, self.limit))


class UnknownLayerError(FoldcoreError):
    pass
