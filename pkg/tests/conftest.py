import pytest

SMALL_CONFIG = """\
# small model so command-line tests stay quick
encoder.d_v = 8
encoder.L_v = 16
encoder.patch = 4
hqc.d_q = 16
hqc.d_llm = 16
hqc.n_layers = 1
hqc.n_heads = 2
model.gate_hidden = 16
model.fusion_layers = 1
model.fusion_heads = 2
model.d_out = 16
model.vocab_size = 512
train.lr = 0.002
train.batch_pairs = 8
train.epochs = 1
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
