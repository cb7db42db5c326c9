from typing import Dict, List, Optional, Tuple

from app.models import ConvergenceRow, ProblemConfig, SolveReport, SuiteResult

REPORT_VERSION = "1.0"


class ReportGenerator:
    """Turns solver and suite results into JSON-ready dictionaries and console text."""

    def generate_solve_report(self, config: ProblemConfig, report: SolveReport,
                              artifacts: Optional[Dict[str, str]] = None) -> Dict:
        """Full JSON report: problem echo, summary, diagnostics and homotopy trace"""
        return {
            "report_metadata": {
                "report_version": REPORT_VERSION,
                "status": self._determine_overall_status(report),
            },
            "problem": config.model_dump(mode="json"),
            "summary": {
                "converged": report.converged,
                "residual_sup": report.residual_sup,
                "adm_margin_min": report.adm_margin_min,
                "newton_iterations_total": report.newton_iterations_total,
                "node_count": report.node_count,
                "h": report.h,
            },
            "diagnostics": {
                "sup_grad": report.sup_grad,
                "sup_kappa": report.sup_kappa,
                "interior_quantity": report.interior_quantity,
                "interior_norm": report.interior_norm,
                "beta": report.beta,
                "comparison_ok": report.comparison_ok,
                "subsolution_verified": report.subsolution_verified,
                "hypothesis": report.hypothesis.model_dump(mode="json") if report.hypothesis else None,
            },
            "homotopy": {
                "final_t": report.final_t,
                "trace": [[t, r] for t, r in report.homotopy_trace],
            },
            "artifacts": artifacts or {},
        }

    def generate_stall_report(self, config: ProblemConfig, message: str, last_t: float,
                              trace: List[Tuple[float, float]]) -> Dict:
        return {
            "report_metadata": {"report_version": REPORT_VERSION, "status": "STALLED"},
            "problem": config.model_dump(mode="json"),
            "summary": {"converged": False, "stall_message": message},
            "homotopy": {"final_t": last_t, "trace": [[t, r] for t, r in trace]},
        }

    def _determine_overall_status(self, report: SolveReport) -> str:
        if not report.converged:
            return "NOT_CONVERGED"
        if not report.comparison_ok:
            return "CONVERGED_COMPARISON_FAILED"
        if report.subsolution_verified is False:
            return "CONVERGED_SUBSOLUTION_REJECTED"
        return "CONVERGED"

    def summary_line(self, report: SolveReport) -> str:
        """One line for the console after a solve"""
        return (
            f"{self._determine_overall_status(report)}: residual {report.residual_sup:.3e}, "
            f"margin {report.adm_margin_min:.3e}, {report.newton_iterations_total} Newton iterations, "
            f"{report.node_count} nodes"
        )

    def format_report_for_display(self, report: SolveReport) -> str:
        """Format a solve report for console/text display"""
        lines = []
        lines.append("=" * 60)
        lines.append("DIRICHLET SOLVE REPORT")
        lines.append("=" * 60)
        lines.append(f"Status: {self._determine_overall_status(report)}")
        lines.append(f"Nodes: {report.node_count} (h = {report.h:g})")
        lines.append("")

        lines.append("CONVERGENCE")
        lines.append("-" * 11)
        lines.append(f"Residual (sup): {report.residual_sup:.3e}")
        lines.append(f"Admissibility margin (min): {report.adm_margin_min:.3e}")
        lines.append(f"Newton iterations: {report.newton_iterations_total}")
        lines.append(f"Homotopy steps: {len(report.homotopy_trace) - 1}, final t = {report.final_t:g}")
        lines.append("")

        lines.append("DIAGNOSTICS")
        lines.append("-" * 11)
        lines.append(f"sup |Du|: {report.sup_grad:.6g}")
        lines.append(f"sup |kappa|: {report.sup_kappa:.6g}")
        lines.append(f"sup (-u)^{report.beta:g} |kappa|: {report.interior_quantity:.6g}")
        lines.append(f"Comparison: {'ok' if report.comparison_ok else 'FAILED'}")
        if report.subsolution_verified is not None:
            lines.append(f"Subsolution: {'verified' if report.subsolution_verified else 'rejected'}")
        if report.hypothesis and report.hypothesis.warnings:
            lines.append("")
            lines.append("WARNINGS")
            lines.append("-" * 8)
            for i, warning in enumerate(report.hypothesis.warnings, 1):
                lines.append(f"{i}. {warning}")
        lines.append("=" * 60)
        return "\n".join(lines)

    def suite_report(self, result: SuiteResult) -> Dict:
        return result.model_dump(mode="json", by_alias=True)

    def format_suite_for_display(self, result: SuiteResult) -> str:
        verdict = "PASS" if result.passed else "FAIL"
        lines = [f"{result.suite} (n={result.n}, p={result.p}, count={result.count}, seed={result.seed}): {verdict}"]
        for check in result.checks:
            mark = "ok" if check.passed else "FAILED"
            lines.append(f"  {check.name:<32} worst slack {check.worst_slack: .3e} "
                         f"(tol {check.tolerance:.0e}, {check.evaluated} samples) {mark}")
        for name, value in result.constants.items():
            lines.append(f"  {name} = {value:.6g}")
        return "\n".join(lines)

    def format_convergence_for_display(self, rows: List[ConvergenceRow]) -> str:
        lines = [f"{'h':>10} {'nodes':>8} {'linf_error':>12} {'order':>7}"]
        for row in rows:
            order = "-" if row.order is None else f"{row.order:.3f}"
            lines.append(f"{row.h:>10.5g} {row.nodes:>8d} {row.linf_error:>12.4e} {order:>7}")
        return "\n".join(lines)
