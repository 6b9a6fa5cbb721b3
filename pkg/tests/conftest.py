def pytest_configure(config):
    config.criterion_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.criterion_lines, key=lambda t: int(t.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
