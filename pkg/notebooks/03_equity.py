"""
Does the bias depend on skin tone?
==================================

Builds a paired cohort of dark and light subjects who differ only in
melanin, then compares their errors before and after correction with
one-tailed and two-sided KS tests.  Run with ``python notebooks/03_equity.py``.
"""

# %%
from solarload import pipeline

cohort = pipeline.equity_cohort(n_pairs=12, seed=0)
print(cohort.report.to_table())

# %% [markdown]
# Per-subject signed errors at the end of the sun exposure.

# %%
for mi, b, a in zip(cohort.melanin_index, cohort.before, cohort.after):
    print(f"MI {mi:5.1f}  uncorrected {b:+.2f} C  corrected {a:+.3f} C")
