import pytest

from hrdmil.synthcohort import SynthSpec, generate_cohort


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    spec = SynthSpec(n_patients=30, patches_min=20, patches_max=40, dim=8, signal_dims=2,
                     signal_gain=4.0, seed=7, name="small")
    return generate_cohort(spec, tmp_path_factory.mktemp("small"))


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
