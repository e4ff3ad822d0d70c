"""Convergence studies: the three methods side by side.

Reproduces the headline order tables on the smooth manufactured solution:
fluxes at k+1 for all methods, potentials at k+1 (RT/HDG) or k (BDM), and
superconvergence of the projected potential where each theory predicts it.
Also shows the reaction variant and the shared condensed system size.
"""

from hybridfem.harness import StudyConfig, compare_methods, run_study

for method, k in (("rt", 0), ("bdm", 1), ("hdg", 1)):
    report = run_study(StudyConfig(method=method, degree=k, levels=4, case="smooth"))
    print(f"== {method} k={k}, smooth case")
    print(report.table())
    print()

# Same multiplier space at equal degree means the condensed systems have
# identical size; accuracy per dof is what distinguishes the methods.
reports, text = compare_methods(("rt", "bdm", "hdg"), degree=1, levels=4)
print("== method comparison at k=1")
print(text)

# A reaction term does not disturb the RT flux orders.
report = run_study(StudyConfig(method="rt", degree=1, levels=4, case="reaction"))
print("\n== rt k=1, reaction case")
print(report.table())
