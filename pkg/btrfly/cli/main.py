# btrfly/cli/main.py
import click
from pydantic import ValidationError

from btrfly import __version__
from btrfly.cli.commands import evaluate, infer, latent, localize, phantom, prepare, sweep, train
from btrfly.core.config import settings
from btrfly.core.exceptions import BtrflyError
from btrfly.core.logging import setup_logging


class BtrflyGroup(click.Group):
    """Turns toolkit errors into a one-line diagnostic and exit status 1"""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except BtrflyError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc.detail}") from exc
        except ValidationError as exc:
            raise click.ClickException(f"invalid configuration: {exc}") from exc
        except (ValueError, FileNotFoundError) as exc:
            raise click.ClickException(str(exc)) from exc


@click.group(cls=BtrflyGroup)
@click.version_option(__version__, prog_name=settings.APP_NAME)
@click.option("--log-level", default=None, help="Overrides LOG_LEVEL")
@click.option("--json-logs/--plain-logs", default=None, help="Overrides LOG_JSON")
def cli(log_level, json_logs):
    """Vertebrae labelling on sagittal/coronal reformations."""
    setup_logging(
        level=(log_level or settings.LOG_LEVEL).upper(),
        json_format=settings.LOG_JSON if json_logs is None else json_logs,
    )


cli.add_command(phantom.command, "phantom")
cli.add_command(prepare.command, "prepare")
cli.add_command(train.command, "train")
cli.add_command(localize.command, "localize")
cli.add_command(infer.command, "infer")
cli.add_command(evaluate.command, "evaluate")
cli.add_command(sweep.command, "sweep")
cli.add_command(latent.command, "latent")
