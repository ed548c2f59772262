"""Command-line front end.

Every file argument is a URI routed through the plugin registry, so
``local:run.nrt``, ``mem:name`` and bare paths all work.  Exit status is 0
on success, 2 for input or environment problems and 3 for errors in a
user-supplied expression.
"""
from __future__ import annotations

import argparse
import importlib
import sys

from . import hist as hist_mod
from . import plugin, query, sched
from .container import chain_paths, open_chain
from .errors import (
    ArityError,
    ExpressionError,
    NoSuchBranchError,
    NoSuchFunctionError,
    NrtError,
    ParseError,
)
from .schema import SchemaRegistry, encode_descriptor
from .tree import open_tree
from .xmlio import export_xml, import_xml, record_to_xml

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EXPR = 3

_EXPR_ERRORS = (ParseError, ExpressionError, NoSuchBranchError, NoSuchFunctionError, ArityError)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _registry(args) -> plugin.PluginRegistry:
    return plugin.default_registry(getattr(args, "plugins", None))


def _open(args, uri: str, mode: str = "r"):
    return plugin.open_any(_registry(args), uri, mode)


def _open_files(args, uri: str):
    """The container and its overflow successors."""
    registry = _registry(args)
    spec, location = plugin.split_uri(registry, uri)
    if spec.handler in ("local", "mem"):
        memory = spec.handler == "mem"
        if len(chain_paths(location, memory=memory)) > 1:
            return open_chain(location, memory=memory)
    return [plugin.open_any(registry, uri)]


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


# verbs ---------------------------------------------------------------------


def cmd_ls(args) -> str:
    f = _open(args, args.file)
    sep = "\t" if args.format == "tsv" else ";"
    lines = [
        sep.join([k.name, str(k.cycle), k.type_name, str(k.type_version), str(k.length)])
        for k in f.list_keys()
    ]
    return "".join(line + "\n" for line in lines)


def cmd_inspect(args) -> str:
    f = _open(args, args.file)
    h = f.header
    out = [
        f"path: {f.path}",
        f"format: {h.format_version}",
        f"process_tag: {h.process_tag.hex()}",
        f"dir_offset: {h.dir_offset}",
        f"size: {f.size}",
        f"keys: {len(f.list_keys())}",
        f"schemas: {len(f.schemas)}",
    ]
    for d in f.schemas.descriptors():
        base = f" base={d.base}" if d.base else ""
        out.append(f"  {d.name} v{d.version} checksum=0x{d.checksum:08x} fields={len(d.fields)}{base}")
    return "\n".join(out) + "\n"


def cmd_schema(args) -> str:
    f = _open(args, args.file)
    descs = f.schemas.descriptors()
    if args.type:
        descs = [d for d in descs if d.name == args.type]
        if not descs:
            raise CliError(f"no schema named {args.type!r} in {args.file}")
    out = []
    for d in descs:
        base = f" base={d.base}" if d.base else ""
        out.append(f"{d.name} v{d.version} checksum=0x{d.checksum:08x}{base}")
        for fd in d.fields:
            out.append(f"  {fd.name}: {fd.describe()}")
        out.append(f"  canonical={encode_descriptor(d).hex()}")
    return "".join(line + "\n" for line in out)


def _spec(args) -> query.HistSpec:
    if args.bins < 1:
        raise CliError("--bins must be positive")
    if (args.min is None) != (args.max is None):
        raise CliError("--min and --max must be given together")
    if args.min is not None and not args.min < args.max:
        raise CliError("--min must be below --max")
    return query.HistSpec(args.bins, args.min, args.max)


def _tree(args):
    return open_tree(_open_files(args, args.file), args.tree)


def _emit_hist(args, h) -> str:
    if args.out:
        _write_text(args.out, record_to_xml(h.to_record(), hist_mod.hist_registry(), with_descriptor=True) + "\n")
        return f"wrote {args.out}\n"
    return hist_mod.render_ascii(h) + "\n"


def cmd_draw(args) -> str:
    spec = _spec(args)
    tree = _tree(args)
    q = query.Query(tree)
    h = q.draw(args.expr, args.select, spec)
    text = _emit_hist(args, h)
    if q.nan_skipped:
        text += f"nan_skipped={q.nan_skipped}\n"
    return text


def _resolve_map_function(name: str, branches: list[str]):
    if ":" in name:
        module, _, attr = name.partition(":")
        try:
            return getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError) as exc:
            raise CliError(f"cannot load {name}: {exc}") from exc
    functions = query.FunctionRegistry()
    fn, arity = functions.lookup(name)
    if arity is not None and arity != len(branches):
        raise ArityError(f"{name}() takes {arity} argument(s), got {len(branches)} branch(es)")

    def per_entry(acc):
        return fn(*(float(acc(b)) for b in branches))

    return per_entry


def cmd_map(args) -> str:
    spec = _spec(args)
    tree = _tree(args)
    for b in args.branches:
        tree.plan(b)
    fn = _resolve_map_function(args.function, args.branches)
    q = query.Query(tree)
    try:
        h = q.map_entries(fn, spec, name=args.function)
    except (NrtError, CliError):
        raise
    except Exception as exc:  # user code: report it rather than crash
        raise CliError(f"{args.function} failed: {type(exc).__name__}: {exc}") from exc
    return _emit_hist(args, h)


def cmd_merge_hist(args) -> str:
    hists = []
    for uri in args.inputs:
        hists.append(hist_mod.load(_open(args, uri), args.name))
    merged = hist_mod.merge(hists, args.name)
    if args.output:
        out = _open(args, args.output, "w")
        hist_mod.save(out, merged)
        out.close()
    return hist_mod.render_ascii(merged) + "\n"


def cmd_export_xml(args) -> str:
    f = _open(args, args.file)
    text = export_xml(f, args.key, args.cycle, with_descriptor=not args.no_descriptor) + "\n"
    if args.out:
        _write_text(args.out, text)
        return ""
    return text


def cmd_import_xml(args) -> str:
    try:
        with open(args.xml, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {args.xml}: {exc}") from exc
    registry = SchemaRegistry()
    record = import_xml(text, registry)
    out = _open(args, args.output, "w")
    key = out.put(args.name or record.type_name, record, registry)
    out.close()
    return f"{key.name};{key.cycle} {key.type_name} v{key.type_version}\n"


def cmd_simulate(args) -> str:
    if args.workers < 1 or args.packets < 1 or args.entries < 1:
        raise CliError("--workers, --packets and --entries must be positive")
    try:
        workers, packets = sched.scenario_gen(
            args.seed, args.workers, args.packets, args.locality, entries=args.entries,
            speed_jitter=args.jitter, remote_penalty=args.penalty, balanced=args.balanced,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    trace, summary = sched.run(workers, packets, args.seed)
    if args.trace:
        _write_text(args.trace, sched.trace_csv(trace))
    return summary.render(tsv=args.format == "tsv")


# parser --------------------------------------------------------------------


def _add_hist_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--min", type=float, default=None)
    p.add_argument("--max", type=float, default=None)
    p.add_argument("--out", help="write the histogram as XML instead of drawing bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrt", description="Inspect and analyze nrt containers.")
    parser.add_argument("--plugins", help="plugin config file (default: $NRT_PLUGINS)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("inspect", help="header and schema inventory")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ls", help="one line per key: name;cycle;type;version;bytes")
    p.add_argument("file")
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.set_defaults(func=cmd_ls)

    p = sub.add_parser("schema", help="dump stored type descriptors")
    p.add_argument("file")
    p.add_argument("type", nargs="?")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("draw", help="histogram an expression over a tree")
    p.add_argument("file")
    p.add_argument("tree")
    p.add_argument("expr")
    p.add_argument("--select", default="")
    _add_hist_flags(p)
    p.set_defaults(func=cmd_draw)

    p = sub.add_parser("map", help="histogram a named function per entry")
    p.add_argument("file")
    p.add_argument("tree")
    p.add_argument("function", help="registered numeric function, or module:callable taking an entry accessor")
    p.add_argument("branches", nargs="*", help="branches passed to a numeric function")
    _add_hist_flags(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("merge-hist", help="sum histograms stored under one key in several files")
    p.add_argument("name")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", help="container to write the merged histogram into")
    p.set_defaults(func=cmd_merge_hist)

    p = sub.add_parser("export-xml", help="render one keyed object as XML")
    p.add_argument("file")
    p.add_argument("key")
    p.add_argument("--cycle", type=int)
    p.add_argument("--no-descriptor", action="store_true", help="omit embedded type descriptors")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_xml)

    p = sub.add_parser("import-xml", help="store an XML object in a new container")
    p.add_argument("xml")
    p.add_argument("output")
    p.add_argument("--name")
    p.set_defaults(func=cmd_import_xml)

    p = sub.add_parser("simulate", help="run the packet scheduler simulation")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--packets", type=int, default=4)
    p.add_argument("--locality", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entries", type=int, default=10, help="entries per packet")
    p.add_argument("--penalty", type=float, default=2.0, help="remote processing time multiplier")
    p.add_argument("--jitter", type=float, default=0.0, help="random speed spread in [0, 1)")
    p.add_argument("--balanced", action="store_true", help="spread hosted packets round-robin")
    p.add_argument("--trace", help="write the event trace as CSV")
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        text = args.func(args)
    except CliError as exc:
        print(f"nrt: error: {exc}", file=sys.stderr)
        return exc.code
    except _EXPR_ERRORS as exc:
        print(f"nrt: expression error: {exc}", file=sys.stderr)
        return EXIT_EXPR
    except (NrtError, OSError, ValueError) as exc:
        print(f"nrt: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
