import re


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with any recorded detail."""
    rows = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", rep.nodeid)
            if not m:
                continue
            num = int(m.group(1))
            ok = key == "passed" and rows.get(num, (True,))[0]
            detail = "; ".join(v for k, v in getattr(rep, "user_properties", []) if k == "detail")
            rows[num] = (ok, m.group(2).replace("_", " "), detail or rows.get(num, ("", "", ""))[2])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        ok, name, detail = rows[num]
        line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {name}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
