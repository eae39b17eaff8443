import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from feedserver import DATA, FeedServer  # noqa: E402

CONFIG = """[paths]
store = {store}
work = {work}
registry = {registry}
cases = {data}/cases.csv
votes_2020 = {data}/votes_2020.csv
votes_2016 = {data}/votes_2016.csv
population = {data}/population.csv
cre = {data}/cre.csv
ranks = {data}/ranks.csv
labels = {data}/labels.csv

[run]
seed = 7

[crawl]
per_host_delay = 0
retries = 0
timeout = 5
max_workers = 2

[curate]
min_articles = 50

[regress]
models = model1,model2

[topics]
k = 6
min_df = 5
spline_df = 5
"""


@pytest.fixture
def feed_server():
    with FeedServer() as srv:
        yield srv


def write_config(tmp, server, name="pipeline.ini"):
    tmp = Path(tmp)
    registry = server.registry_csv(tmp / "registry.csv")
    cfg = tmp / name
    cfg.write_text(CONFIG.format(store=tmp / "store", work=tmp / "work", registry=registry, data=DATA))
    return cfg


@pytest.fixture
def pipeline_config(tmp_path, feed_server):
    return write_config(tmp_path, feed_server)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
