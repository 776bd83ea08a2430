import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240601))


@pytest.fixture
def toy_case_text():
    """Minimal well-formed MATPOWER-style case: 4 buses, 4 branches (one
    parallel pair), one generator."""
    return """
function mpc = toy
mpc.version = '2';
mpc.baseMVA = 100;
% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t110\t1\t1.1\t0.9;
\t2\t1\t40\t0\t0\t0\t1\t1\t0\t110\t1\t1.1\t0.9;
\t3\t1\t30\t0\t0\t0\t1\t1\t0\t110\t1\t1.1\t0.9;
\t4\t1\t30\t0\t0\t0\t1\t1\t0\t110\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t100\t0\t0\t0\t1\t100\t1\t0\t0;
];
mpc.branch = [
\t1\t2\t0\t0.2\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t1\t2\t0\t0.2\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t3\t0\t0.25\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t3\t4\t0\t0.4\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t4\t0\t0.5\t0\t0\t0\t0\t0\t0\t0\t-360\t360;
];
"""
