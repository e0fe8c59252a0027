import helpers


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if helpers.ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in helpers.ACCEPTANCE:
            terminalreporter.write_line(line)
