import pipelines


def pytest_terminal_summary(terminalreporter):
    if pipelines.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in pipelines.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
