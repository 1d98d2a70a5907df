from nonlocal_cauchy.simulator._check_kernel import check_kernel
from nonlocal_cauchy.simulator._report import report
from nonlocal_cauchy.simulator._simulate import simulate
from nonlocal_cauchy.simulator._solve import solve
from nonlocal_cauchy.simulator._verify import CRITERIA, run_criterion, verify
