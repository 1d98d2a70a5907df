from nonlocal_cauchy.utils.utils import *
from nonlocal_cauchy.utils.io import *
