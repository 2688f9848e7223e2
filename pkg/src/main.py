import argparse
import logging
import sys
from datetime import datetime

from commands import COMMANDS, EXIT_OK, build_config, exit_code


def _add_common(parser):
    parser.add_argument("--config", help="plik konfiguracyjny klucz=wartość; flagi mają pierwszeństwo")
    parser.add_argument("-o", "--output", help="prefiks plików wynikowych")
    parser.add_argument("--dataset", help="zbiór danych (kanoniczny lub kolumnowy z --preset)")
    parser.add_argument("--preset", help="układ kolumn pliku pomiarowego (fresnel2d, fresnel3d)")
    parser.add_argument("--dim", type=int, help="wymiar: 2 lub 3")
    parser.add_argument("--freqs", help="częstotliwości, np. 2,4,6,8GHz")
    parser.add_argument("--emitters", help="podzbiór nadajników, np. 0-8,12")
    parser.add_argument("--progress", action="store_true", help="pasek postępu")


def _add_model(parser):
    parser.add_argument("--incident", help="model fali padającej: isotropic, plane, hankel")
    parser.add_argument("--modes", type=int, help="liczba modów szeregu Hankla")
    parser.add_argument("--material", help="diel:<eps> lub cond")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoimg", description="Obrazowanie pochodną topologiczną",
                                     argument_default=argparse.SUPPRESS)
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit-incident", help="dopasowanie szeregu Hankla do pola padającego",
                         argument_default=argparse.SUPPRESS)
    _add_common(fit)
    fit.add_argument("--modes", type=int, help="liczba modów szeregu Hankla")

    synth = sub.add_parser("synth", help="syntetyczny zbiór danych z rozwiązania analitycznego",
                           argument_default=argparse.SUPPRESS)
    _add_common(synth)
    _add_model(synth)
    synth.add_argument("--shape", dest="shapes", action="append", help="disk:x,y,r lub point:x,y,z[,amp]")
    synth.add_argument("--noise", type=float, help="względny poziom szumu")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--bounds", help="granice obszaru inspekcji")

    invert = sub.add_parser("invert", help="pole TD/TE, mapa ciepła i maski obszarów",
                            argument_default=argparse.SUPPRESS)
    _add_common(invert)
    _add_model(invert)
    invert.add_argument("--kind", help="td lub te")
    invert.add_argument("--lambda", dest="lambdas", help="progi, np. 0.7,0.9")
    invert.add_argument("--bounds", help="min,max lub para min,max dla każdej osi")
    invert.add_argument("--resolution", type=int)
    invert.add_argument("--reciprocity", action="store_true", help="zamiana ról nadajników i odbiorników (3D)")
    invert.add_argument("--threads", type=int)
    invert.add_argument("--strict", action="store_true", help="błąd zamiast pominięcia zdegenerowanej częstotliwości")
    invert.add_argument("--prune", type=int, help="usuń składowe spójne mniejsze niż N komórek")
    invert.add_argument("--truth", help="plik JSON z kształtami wzorcowymi")

    metrics = sub.add_parser("metrics", help="porównanie maski z kształtami wzorcowymi",
                             argument_default=argparse.SUPPRESS)
    metrics.add_argument("--config")
    metrics.add_argument("-o", "--output")
    metrics.add_argument("--mask", help="plik CSV maski")
    metrics.add_argument("--truth", help="plik JSON z kształtami wzorcowymi")

    validate = sub.add_parser("validate", help="raport kompletności i poprawności zbioru danych",
                              argument_default=argparse.SUPPRESS)
    _add_common(validate)
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(filename=f"topoimglog-{datetime.now().isoformat().replace(':', '')}.txt",
                        encoding="utf-8", level=getattr(logging, args.pop("log_level")))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        config = build_config(command, args, config_path)
        artifacts = COMMANDS[command](config)
    except Exception as e:
        code = exit_code(e)
        message = getattr(e, "message", None) or str(e)
        logging.error(f"Polecenie {command} przerwane (kod {code}): {message}")
        print(f"Błąd: {message}", file=sys.stderr)
        return code
    for path in artifacts:
        print(path)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
