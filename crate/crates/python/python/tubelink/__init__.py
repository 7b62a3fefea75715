from ._tubelink import *  # noqa: F401,F403
from ._tubelink import __all__  # noqa: F401
