"""Audit every built-in browser preset and print the verdict matrix.

Run: python demos/03_browser_matrix.py
"""

from emeforge.audit import audit_browser
from emeforge.useragent import PRESETS

print(f"{'preset':<24} {'RQ1':<15} {'RQ2':<15} {'RQ3':<15}")
print("-" * 69)
for name in PRESETS:
    report, _ = audit_browser(name, seed=42)
    print(
        f"{name:<24} {report.verdicts['RQ1'].value:<15} "
        f"{report.verdicts['RQ2'].value:<15} {report.verdicts['RQ3'].value:<15}"
    )

print("\nlegend: RQ1 = Client ID protected in license requests")
print("        RQ2 = Client ID protected in renewal requests")
print("        RQ3 = persistent sessions behave like cookies")
