"""
Command verbs for the besov-interp tool.

Each verb is a Command subclass that declares its flags and runs against the
parsed arguments. The CommandManager keeps the registry and routes a verb to
its command, the same way for every verb.
"""

import argparse
import logging
import math
import sys
from abc import ABC, abstractmethod

import numpy as np

from besov_interp.grid import gen_field, load_field, parse_law, store_field
from besov_interp.interp import (
    DEFAULT_DECADES,
    DEFAULT_PPD,
    QuadratureSpec,
    ThetaEta,
    format_number,
    interp_norm,
    k_curve,
)
from besov_interp.oracle import SUM, EnumerationCapError, FunctionalForm, default_cap, k_vertex_exhaustive
from besov_interp.solver import MERGE_CAP, k_dispatch, select_case
from besov_interp.spaces import outer_norm, parse_pair, parse_side, x_norm

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_CAPABILITY = 3

CASE_BOUNDS = {
    "i": (1.0 / 8.0, 8.0),
    "ii": (1.0 / 8.0, 8.0),
    "iii": (0.5 - 1e-6, 2.0 + 1e-6),
    "iv": (0.5 - 1e-6, 2.0 + 1e-6),
}


def case_bounds(case, pair, count):
    """
    Accepted fast/oracle ratio range for instances of `count` coefficients.

    Case iii minimizes over its power frontier while that fits MERGE_CAP,
    which every field of at most log2(MERGE_CAP) coefficients does; larger
    fields may take the layer-separable route, up to 2^(1/min q) above the
    oracle.
    """
    lower, upper = CASE_BOUNDS[case]
    if case == "iii" and count > MERGE_CAP.bit_length() - 1:
        q = min(pair.side0.outer.q, pair.side1.outer.q)
        upper = max(upper, 2.0 ** (1.0 / q) + 1e-6)
    return lower, upper


PAIR_HELP = "couple as SIDE0;SIDE1, each side s=S,q=Q,A=INNER or S,Q,INNER with INNER lp(P), lorentz(P,TAU) or sup"


def _argument(parse):
    """Wrap a parser so argparse reports its message as a usage error."""

    def convert(text):
        try:
            return parse(text)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None

    convert.__name__ = parse.__name__
    return convert


pair_argument = _argument(parse_pair)
side_argument = _argument(parse_side)
form_argument = _argument(FunctionalForm.parse)
law_argument = _argument(parse_law)


def _extended(text):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _read_field(path):
    if path == "-":
        return load_field(sys.stdin.buffer)
    with open(path, "rb") as stream:
        return load_field(stream)


def _cap(args):
    return default_cap() if args.cap is None else args.cap


def _form(args):
    if args.method == "fast":
        if args.form is not None:
            raise ValueError("--form applies to --method oracle only; the fast method reports its case's own form")
        return None
    return SUM if args.form is None else args.form


def _window(args, field, pair):
    if args.tmin is not None or args.tmax is not None:
        default = QuadratureSpec.default_for(field, pair, DEFAULT_DECADES, args.ppd)
        t_lo = default.t_lo if args.tmin is None else args.tmin
        t_hi = default.t_hi if args.tmax is None else args.tmax
        return QuadratureSpec(t_lo, t_hi, args.ppd)
    return QuadratureSpec.default_for(field, pair, DEFAULT_DECADES, args.ppd)


def _add_field_flags(parser):
    parser.add_argument("--field", required=True, help="coefficient file ('-' for stdin)")
    parser.add_argument("--pair", required=True, type=pair_argument, help=PAIR_HELP)
    parser.add_argument("--cap", type=int, default=None, help="enumeration cap (default: KFUNC_CAP or 22)")


def _add_method_flags(parser, default_method):
    parser.add_argument("--method", choices=("fast", "oracle"), default=default_method)
    parser.add_argument("--form", type=form_argument, default=None,
                        help="oracle objective: sum (default), max or xi:V; the fast method uses its case's form")


def _add_window_flags(parser):
    parser.add_argument("--tmin", type=float, default=None, help="smallest threshold")
    parser.add_argument("--tmax", type=float, default=None, help="largest threshold")
    parser.add_argument("--ppd", type=int, default=DEFAULT_PPD, help="points per decade")


class Command(ABC):
    """Abstract base class for all verbs."""

    help = ""

    def __init__(self, manager):
        self.manager = manager

    @abstractmethod
    def configure(self, parser):
        """Declare the verb's flags on its sub-parser."""

    @abstractmethod
    def run(self, args):
        """
        Run the verb.

        Returns:
            int: Process exit code
        """


class NormCommand(Command):
    help = "outer norm (or power-space norm) of a field"

    def configure(self, parser):
        parser.add_argument("--field", required=True, help="coefficient file ('-' for stdin)")
        parser.add_argument("--side", required=True, type=side_argument, help="s=S,q=Q,A=INNER")
        parser.add_argument("--power", action="store_true", help="raise the norm to q")

    def run(self, args):
        field = _read_field(args.field)
        value = x_norm(field, args.side) if args.power else outer_norm(field, args.side)
        print(format_number(value))
        return EXIT_OK


class KFuncCommand(Command):
    help = "K-functional at one threshold, printed as case,value"

    def configure(self, parser):
        _add_field_flags(parser)
        parser.add_argument("--t", type=float, required=True, help="threshold t > 0")
        _add_method_flags(parser, "fast")

    def run(self, args):
        field = _read_field(args.field)
        cap = _cap(args)
        form = _form(args)
        if args.method == "fast":
            result = k_dispatch(args.t, field, args.pair, cap)
            case, value = result.case, result.value
        else:
            case = select_case(args.pair)
            value = k_vertex_exhaustive(args.t, field, args.pair, form, cap).value
        print(f"{case},{format_number(value)}")
        return EXIT_OK


class CurveCommand(Command):
    help = "sampled K-curve as CSV t,value"

    def configure(self, parser):
        _add_field_flags(parser)
        _add_window_flags(parser)
        _add_method_flags(parser, "oracle")

    def run(self, args):
        field = _read_field(args.field)
        spec = _window(args, field, args.pair)
        curve = k_curve(field, args.pair, spec, args.method, _form(args) or SUM, _cap(args))
        print("t,value")
        for t, value in curve.rows():
            print(f"{format_number(t)},{format_number(value)}")
        return EXIT_OK


class InterpCommand(Command):
    help = "(theta, eta) interpolation norm with its tail error estimate"

    def configure(self, parser):
        _add_field_flags(parser)
        parser.add_argument("--theta", type=float, required=True, help="theta in (0, 1)")
        parser.add_argument("--eta", type=_extended, default=1.0, help="eta in (0, inf]")
        _add_window_flags(parser)
        _add_method_flags(parser, "oracle")

    def run(self, args):
        field = _read_field(args.field)
        te = ThetaEta(args.theta, args.eta)
        spec = _window(args, field, args.pair)
        curve = k_curve(field, args.pair, spec, args.method, _form(args) or SUM, _cap(args))
        result = interp_norm(curve, te)
        print("norm,tail_error")
        print(f"{format_number(result.value)},{format_number(result.tail_error)}")
        return EXIT_OK


class VerifyCommand(Command):
    help = "compare the fast solver with the oracle on generated instances"

    def configure(self, parser):
        parser.add_argument("--pair", required=True, type=pair_argument, help=PAIR_HELP)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--jmin", type=int, default=0)
        parser.add_argument("--jmax", type=int, default=1)
        parser.add_argument("--size", type=int, default=3, help="values per layer")
        parser.add_argument("--law", type=law_argument, default=parse_law("uniform"),
                            help="uniform or dyadic-decay:RATE")
        parser.add_argument("--trials", type=int, default=10)
        parser.add_argument("--t-points", dest="t_points", type=int, default=5)
        parser.add_argument("--tmin", type=float, default=0.1)
        parser.add_argument("--tmax", type=float, default=10.0)
        parser.add_argument("--cap", type=int, default=None, help="enumeration cap (default: KFUNC_CAP or 22)")

    def run(self, args):
        cap = _cap(args)
        count = (args.jmax - args.jmin + 1) * args.size
        if args.trials > 0 and count > cap:
            raise EnumerationCapError(count, cap)

        case = select_case(args.pair)
        lower, upper = case_bounds(case, args.pair, count)
        ts = np.logspace(math.log10(args.tmin), math.log10(args.tmax), args.t_points) if args.t_points > 1 \
            else np.array([args.tmin])
        ratios = []
        print("trial,t,fast,oracle,ratio")
        for trial in range(args.trials):
            field = gen_field(args.seed + trial, (args.jmin, args.jmax), args.size, args.law)
            for t in ts:
                result = k_dispatch(t, field, args.pair, cap)
                oracle = k_vertex_exhaustive(t, field, args.pair, result.form, cap).value
                ratio = 1.0 if oracle == 0 and result.value == 0 else result.value / oracle
                ratios.append(ratio)
                print(",".join([str(trial)] + [format_number(v) for v in (t, result.value, oracle, ratio)]))

        if not ratios:
            print("# 0 instances: pass")
            return EXIT_OK
        low, high = min(ratios), max(ratios)
        passed = lower <= low and high <= upper
        print(f"# {args.trials} instances, case {case}, ratio in [{format_number(low)}, {format_number(high)}], "
              f"bounds [{format_number(lower)}, {format_number(upper)}]: {'pass' if passed else 'fail'}")
        if not passed:
            logger.warning("fast/oracle ratios [%g, %g] outside [%g, %g] for %s", low, high, lower, upper, args.pair)
            return EXIT_VERIFY_FAILED
        return EXIT_OK


class GenCommand(Command):
    help = "write a generated field in the coefficient file format"

    def configure(self, parser):
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--jmin", type=int, default=0)
        parser.add_argument("--jmax", type=int, default=0)
        parser.add_argument("--size", type=int, default=4, help="values per layer")
        parser.add_argument("--law", type=law_argument, default=parse_law("uniform"),
                            help="uniform or dyadic-decay:RATE")

    def run(self, args):
        field = gen_field(args.seed, (args.jmin, args.jmax), args.size, args.law)
        store_field(field, sys.stdout)
        return EXIT_OK


class CommandManager:
    """
    Registry of verbs and their commands.
    """

    def __init__(self):
        self.commands = {}

    def add_command(self, name, command_class):
        """
        Add a command to the manager.

        Args:
            name: Verb that selects the command
            command_class: Class of the command
        """
        self.commands[name] = command_class(self)

    def configure(self, subparsers):
        for name, command in self.commands.items():
            command.configure(subparsers.add_parser(name, help=command.help))

    def run(self, name, args):
        """
        Run the command registered for `name`.

        Returns:
            int: Process exit code
        """
        if name not in self.commands:
            raise ValueError(f"Command '{name}' does not exist")
        logger.debug("running %s", name)
        return self.commands[name].run(args)


def default_manager():
    manager = CommandManager()
    manager.add_command("norm", NormCommand)
    manager.add_command("kfunc", KFuncCommand)
    manager.add_command("curve", CurveCommand)
    manager.add_command("interp", InterpCommand)
    manager.add_command("verify", VerifyCommand)
    manager.add_command("gen", GenCommand)
    return manager
