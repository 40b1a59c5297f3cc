"""ReportAggregator - Combines one command's results into the report package."""

from typing import Any, Dict, List, Optional

from app.models.experiment import CommandName, ExperimentConfig
from app.models.reports import ExperimentReport, encode_extended
from app.services.verify import fingerprint


class ReportAggregator:
    """Aggregator for experiment outputs."""

    def aggregate(
        self,
        config: ExperimentConfig,
        result: Dict[str, Any],
        passed: Optional[bool],
        caveats: List[Dict[str, Any]],
    ) -> ExperimentReport:
        """
        Assemble the deterministic report of a run.

        Returns an ExperimentReport with a one-line summary.
        """
        caveat_counts: Dict[str, int] = {}
        for caveat in caveats:
            kind = caveat.get("kind", "unknown")
            caveat_counts[kind] = caveat_counts.get(kind, 0) + 1

        summary_parts = [self._headline(config.command, result, passed)]
        if caveat_counts:
            listed = ", ".join(f"{count} {kind}" for kind, count in sorted(caveat_counts.items()))
            summary_parts.append(f"caveats: {listed}")

        return ExperimentReport(
            schema="1",
            command=config.command.value,
            status="failed" if passed is False else "completed",
            passed=passed,
            summary=". ".join(summary_parts),
            fingerprint=fingerprint(config.canonical()),
            seed=config.seed,
            caveats=encode_extended(caveats),
            result=encode_extended(result),
        )

    @staticmethod
    def _headline(command: CommandName, result: Dict[str, Any], passed: Optional[bool]) -> str:
        if command == CommandName.DISTANCE:
            return f"quotient distance {result['distance']:.9g}"
        if command == CommandName.ORBIT:
            return f"{len(result['points'])} orbit point(s) within radius {result['radius']:.6g}"
        if command == CommandName.DIRICHLET:
            return f"{sum(row['inside'] for row in result['points'])} of {len(result['points'])} point(s) inside the Dirichlet domain"
        if command == CommandName.MEASURE:
            return f"measure {result['estimate']:.6g} ± {result['stderr']:.2g}"
        if command == CommandName.MODULUS:
            return f"discrete modulus {result['estimate']:.6g}"
        if command == CommandName.DILATATION:
            return f"max inner dilatation {result['k_inner_max']:.6g}"
        if command in (CommandName.VERIFY_POLETSKY, CommandName.VERIFY_INVERSE):
            verdict = "holds" if passed else "fails"
            return f"inequality {verdict}: lhs {result['lhs']:.6g}, rhs {result['rhs']:.6g}"
        if command == CommandName.FMO:
            return f"mean oscillation {'bounded' if result['bounded'] else 'growing'} over {len(result['rows'])} levels"
        return f"modulus of continuity {'vanishing' if result['vanishing'] else 'not vanishing'} over {len(result['rows'])} radii"
