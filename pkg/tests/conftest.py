import numpy as np
import pytest

from masa.symmetry import (
    AGENT_INDEXED,
    CENTRAL_VARIANT,
    PLANAR_ROTATE,
    SCALAR_INVARIANT,
    SIGN_FLIP,
    Block,
    BlockLayout,
    SymmetrySpec,
    build_transform_set,
)


def finger_spec(n=3, agent_width=9, with_central_action=False):
    """Three-finger style layout: [t_delay, alpha_0..alpha_{n-1}, p_object]."""
    obs = [Block("t_delay", 1, SCALAR_INVARIANT)]
    obs += [Block(f"alpha{k}", agent_width, AGENT_INDEXED) for k in range(n)]
    obs.append(Block("p", 2, CENTRAL_VARIANT, PLANAR_ROTATE, pairs=((0, 1),)))
    act = []
    if with_central_action:
        act.append(Block("push", 3, CENTRAL_VARIANT, PLANAR_ROTATE, pairs=((0, 1),)))
        act.append(Block("grip", 1, SCALAR_INVARIANT))
    act += [Block(f"tau{k}", 3, AGENT_INDEXED) for k in range(n)]
    return SymmetrySpec("cyclic", n, BlockLayout(tuple(obs)), BlockLayout(tuple(act)))


def mirror_spec():
    obs = (
        Block("body", 3, CENTRAL_VARIANT, SIGN_FLIP, mask=(0, 1, 1)),
        Block("leg_L", 4, AGENT_INDEXED, group="leg"),
        Block("leg_R", 4, AGENT_INDEXED, group="leg"),
        Block("clock", 1, SCALAR_INVARIANT),
    )
    act = (
        Block("torso", 2, CENTRAL_VARIANT, SIGN_FLIP, mask=(1, 0)),
        Block("hip_L", 2, AGENT_INDEXED, group="hip"),
        Block("hip_R", 2, AGENT_INDEXED, group="hip"),
    )
    return SymmetrySpec("reflection", 2, BlockLayout(obs), BlockLayout(act))


SPECS = {
    "cyclic2": lambda: finger_spec(2, 5, True),
    "cyclic3": lambda: finger_spec(3, 9, True),
    "cyclic4": lambda: finger_spec(4, 4, True),
    "reflection": mirror_spec,
}


@pytest.fixture(params=sorted(SPECS))
def tset(request):
    return build_transform_set(SPECS[request.param]())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------

CRITERIA: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(CRITERIA[number])


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
