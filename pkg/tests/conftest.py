import logging

# verdict lines recorded by the acceptance tests, printed after the run
CRITERIA = {}


def pytest_configure(config):
    logging.getLogger("solitonlab").setLevel(logging.ERROR)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, text = CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {text}")
