"""Per-module parameter counts for a model preset (documentation only).

    python scripts/parameter_report.py [desk|mini|paper]
"""
import sys

from vsrssl.models import PretextModel, SentenceModel, WordModel, parameter_report, preset


def main():
    name = sys.argv[1] if len(sys.argv) > 1 else "paper"
    cfg = preset(name)
    for label, cls in (("pretext", PretextModel), ("word", WordModel), ("sentence", SentenceModel)):
        print(f"[{name}] {label}")
        for module, count in parameter_report(cls(cfg)).items():
            print(f"  {module:<10} {count:>12,}")


if __name__ == "__main__":
    main()
