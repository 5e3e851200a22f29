"""
Exceções do kinex
"""


class KinexError(Exception):
    """Base de todos os erros do pacote"""


class ParameterError(KinexError, ValueError):
    """Parâmetro fora do domínio (w <= 0, mu fora de [0,1], grade inválida...)"""


class InputError(KinexError, ValueError):
    """Entrada vazia ou mal formada (amostra vazia, densidade não normalizada)"""


class SupportError(KinexError, ValueError):
    """Funções cumulativas definidas em suportes diferentes"""


class PreconditionError(KinexError, ValueError):
    """Pré-condição violada (ex.: médias diferentes em d_alpha)"""


class TruncationError(KinexError, RuntimeError):
    """Massa demais fora da grade - aumente x_max"""


class NumericalError(KinexError, RuntimeError):
    """Falha numérica interna (bisseção sem troca de sinal, extrapolação divergente)"""
