def report(capfd, ok: bool, label: str, detail: str):
    """One visible pass/fail line per acceptance criterion."""
    with capfd.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)
