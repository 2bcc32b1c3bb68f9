"""Command-line client for the idea-generation service.

Every subcommand talks JSON over HTTP. With ``--server`` it targets a
running service; without it the app runs in-process against the local
workspace, so no daemon is needed for single-user work. Either way the
command logic stays identical.

Exit codes: 0 success, 2 usage, 3 backend, 4 parse/validation,
5 incomplete pipeline.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import httpx

from .config import load_config
from .engine import Engine
from .errors import (
    EXIT_INCOMPLETE,
    BackendError,
    RecordParseError,
    SparkError,
    UsageError,
    exit_code_for_kind,
)
from .judge_data import load_scores

log = logging.getLogger(__name__)

# Fallback mapping for error bodies that are not our envelope
# (e.g. request-validation responses produced by the framework).
_STATUS_KIND = {400: "usage", 409: "incomplete", 422: "parse", 502: "backend", 504: "timeout"}


class RemoteError(SparkError):
    """Error envelope relayed from the service."""

    def __init__(self, kind: str, message: str, exit_code: int):
        super().__init__(message)
        self.kind = kind
        self.exit_code = exit_code


class Client:
    """Thin JSON client over either a real or an in-process HTTP server."""

    def __init__(self, http: httpx.Client, engine=None):
        self._http = http
        self._engine = engine

    @classmethod
    def remote(cls, server: str) -> "Client":
        return cls(httpx.Client(base_url=server, timeout=600.0))

    @classmethod
    def local(cls, config, mock_script: str | None) -> "Client":
        import warnings

        with warnings.catch_warnings():
            # newer starlette wants an httpx2-based test client that is not
            # packaged everywhere; the httpx one still works
            warnings.filterwarnings("ignore", message=".*httpx2.*")
            from fastapi.testclient import TestClient

        from .service import create_app

        app = create_app(config, mock_script)
        # Server exceptions must surface as error envelopes, not re-raise
        # in the client process; the exception handler does the mapping.
        return cls(TestClient(app, raise_server_exceptions=False), engine=app.state.engine)

    def close(self) -> None:
        try:
            self._http.close()
        finally:
            if self._engine is not None:
                self._engine.close()

    def get(self, path: str) -> dict:
        return self._unwrap(self._request("GET", path))

    def post(self, path: str, payload: dict | None = None) -> dict:
        return self._unwrap(self._request("POST", path, json=payload))

    def _request(self, method: str, path: str, **kw) -> httpx.Response:
        try:
            return self._http.request(method, path, **kw)
        except httpx.HTTPError as exc:
            raise BackendError(f"cannot reach server: {exc}") from exc

    def _unwrap(self, response: httpx.Response) -> dict:
        if response.status_code < 400:
            return response.json()
        try:
            payload = response.json()
        except ValueError:
            payload = {}
        envelope = payload.get("error")
        if isinstance(envelope, dict) and "kind" in envelope:
            raise RemoteError(
                str(envelope.get("kind", "error")),
                str(envelope.get("message", "")),
                int(envelope.get("exit_code", 1)),
            )
        detail = payload.get("detail", response.text)
        kind = _STATUS_KIND.get(response.status_code, "error")
        raise RemoteError(kind, f"HTTP {response.status_code}: {detail}", exit_code_for_kind(kind))


def _client(ctx: click.Context) -> Client:
    opts = ctx.obj
    if opts.get("client") is None:
        if opts["server"]:
            if opts["mock_script"]:
                log.warning("--mock-script is ignored when --server is set")
            opts["client"] = Client.remote(opts["server"])
        else:
            config = load_config(opts["config_path"], workspace=opts["workspace"])
            opts["client"] = Client.local(config, opts["mock_script"])
        ctx.call_on_close(opts["client"].close)
    return opts["client"]


def _fail(exc: SparkError) -> None:
    click.echo(f"error ({exc.kind}): {exc}", err=True)
    sys.exit(exc.exit_code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SparkError as exc:
            _fail(exc)

    return wrapper


def _read_jsonl(path: str | Path) -> list[dict]:
    source = Path(path)
    if not source.exists():
        raise UsageError(f"file not found: {source}")
    records = []
    for number, line in enumerate(source.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise RecordParseError(str(source), number, str(exc)) from exc
    return records


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="TOML config file.")
@click.option("--workspace", type=click.Path(), default=None, help="Workspace directory (wins over config and environment).")
@click.option("--server", default=None, metavar="URL", help="Base URL of a running service; omit to run in-process.")
@click.option("--mock-script", type=click.Path(), default=None, help="Scripted backend responses; replaces every live backend.")
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
@click.pass_context
def main(ctx, config_path, workspace, server, mock_script, verbose):
    """Retrieval-augmented generation and review of research ideas."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = {
        "config_path": config_path,
        "workspace": workspace,
        "server": server,
        "mock_script": mock_script,
        "client": None,
    }


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path())
@click.option("--source-kind", default="paper", show_default=True, help="Label stored with each document.")
@click.pass_context
@handle_errors
def ingest(ctx, files, source_kind):
    """Add local text files to the corpus."""
    items = Engine.read_document_files(list(files))
    for item in items:
        item["source_kind"] = source_kind
    result = _client(ctx).post("/documents", {"documents": items})
    click.echo(f"ingested {result['ingested']} documents ({result['skipped']} skipped)")
    for doc_id in result["document_ids"]:
        click.echo(doc_id)


@main.group()
def index():
    """Vector index operations."""


@index.command("build")
@click.pass_context
@handle_errors
def index_build(ctx):
    """Embed chunks that still need it, then rebuild the index."""
    stats = _client(ctx).post("/index/build")
    click.echo(json.dumps(stats, indent=2))


@index.command("stats")
@click.pass_context
@handle_errors
def index_stats(ctx):
    """Print corpus and index counts."""
    click.echo(json.dumps(_client(ctx).get("/index/stats"), indent=2))


def _ask_once(ctx, question: str) -> None:
    result = _client(ctx).post("/ask", {"question": question})
    click.echo(result["answer"])
    click.echo("")
    click.echo("Sources:")
    if result["cited_source_ids"]:
        for source in result["cited_source_ids"]:
            click.echo(f"  {source}")
    else:
        click.echo("  (none)")


@main.command()
@click.argument("question", required=False)
@click.option("--interactive", is_flag=True, help="Read questions from a prompt loop; :quit exits.")
@click.pass_context
@handle_errors
def ask(ctx, question, interactive):
    """Answer a question from the corpus, citing sources."""
    if not question and not interactive:
        raise UsageError("provide a question or use --interactive")
    if question:
        _ask_once(ctx, question)
    if interactive:
        _repl(ctx)


def _repl(ctx) -> None:
    while True:
        try:
            line = input("spark> ")
        except (EOFError, KeyboardInterrupt):
            click.echo("")
            return
        question = line.strip()
        if not question:
            continue
        if question == ":quit":
            return
        try:
            _ask_once(ctx, question)
        except SparkError as exc:
            # keep the session alive; each exchange is already persisted
            click.echo(f"error ({exc.kind}): {exc}", err=True)


@main.command("generate-ideas")
@click.option("--question", required=True, help="Research question seeding retrieval.")
@click.pass_context
@handle_errors
def generate_ideas(ctx, question):
    """Generate structured research ideas grounded in retrieved evidence.

    Prints one idea per line as JSON; diagnostics go to stderr.
    """
    result = _client(ctx).post("/ideas/generate", {"question": question})
    for idea in result["ideas"]:
        click.echo(json.dumps(idea))
    for err in result["errors"]:
        click.echo(f"error ({err['kind']}): {err['message']}", err=True)
    if not result["ideas"]:
        click.echo("no ideas generated", err=True)
        sys.exit(EXIT_INCOMPLETE)


@main.command("filter-ideas")
@click.option("--in", "in_path", required=True, type=click.Path(), help="Ideas JSONL to review.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Where to write decision JSONL.")
@click.option("--reviews", type=int, default=None, help="Reviews per idea (service default: 3).")
@click.pass_context
@handle_errors
def filter_ideas(ctx, in_path, out_path, reviews):
    """Run simulated peer review over ideas and write decisions."""
    payload: dict = {"ideas": _read_jsonl(in_path)}
    if reviews is not None:
        payload["reviews_per_idea"] = reviews
    result = _client(ctx).post("/ideas/filter", payload)
    with open(out_path, "w", encoding="utf-8") as sink:
        for decision in result["decisions"]:
            sink.write(json.dumps(decision) + "\n")
    accepted = sum(1 for d in result["decisions"] if d.get("Decision") == "ACCEPT")
    click.echo(f"{accepted}/{len(result['decisions'])} ideas accepted -> {out_path}")
    for err in result["errors"]:
        click.echo(f"error ({err['kind']}): {err['message']}", err=True)


@main.command()
@click.option("--question", required=True, help="Research question driving the run.")
@click.pass_context
@handle_errors
def run(ctx, question):
    """Execute the full pipeline: retrieve, ideate, review, refine."""
    result = _client(ctx).post("/pipeline/run", {"question": question})
    report = result["report"]
    click.echo(f"status: {report['status']}")
    if report["incomplete_stage"]:
        click.echo(f"stalled at: {report['incomplete_stage']}")
    snippets = len(report["evidence"]["snippets"]) if report["evidence"] else 0
    click.echo(f"evidence snippets: {snippets}")
    click.echo(f"ideas: {len(report['ideas'])}")
    click.echo(f"accepted: {len(report['accepted_ideas'])}")
    for err in report["errors"]:
        click.echo(f"error ({err['kind']}) in {err['stage']}: {err['message']}", err=True)
    click.echo(f"report: {result['report_path']}")
    if report["status"] != "complete":
        kinds = [err["kind"] for err in report["errors"]]
        sys.exit(exit_code_for_kind(kinds[0]) if kinds else EXIT_INCOMPLETE)


@main.command("build-judge-dataset")
@click.option("--dump", "dump_path", required=True, type=click.Path(), help="Peer-review dump (JSONL).")
@click.option("--cutoff", required=True, help="Last submission date (YYYY-MM-DD) placed in the train split.")
@click.pass_context
@handle_errors
def build_judge_dataset(ctx, dump_path, cutoff):
    """Build the four-task reviewer training dataset from a review dump."""
    payload = {"dump_path": str(Path(dump_path).resolve()), "cutoff": cutoff}
    result = _client(ctx).post("/judge/dataset/build", payload)
    click.echo(json.dumps(result, indent=2))


@main.command("eval-judge")
@click.option("--pred", "pred_path", required=True, type=click.Path(), help="Predicted scores (JSONL).")
@click.option("--actual", "actual_path", required=True, type=click.Path(), help="Ground-truth scores (JSONL).")
@click.pass_context
@handle_errors
def eval_judge(ctx, pred_path, actual_path):
    """Score predictions against ground truth (RMSE)."""
    predicted = load_scores(pred_path)
    actual = load_scores(actual_path)
    result = _client(ctx).post("/judge/eval", {"predicted": predicted, "actual": actual})
    click.echo(f"rmse: {result['rmse']:.6f} over {result['count']} scores")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.pass_context
@handle_errors
def serve(ctx, host, port):
    """Run the HTTP service in the foreground."""
    import uvicorn

    from .service import create_app

    opts = ctx.obj
    config = load_config(opts["config_path"], workspace=opts["workspace"])
    app = create_app(config, opts["mock_script"])
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
