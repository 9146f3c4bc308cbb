"""Configuration constants and templates for the workbench."""

from __future__ import annotations

import logging
from textwrap import dedent

from jinja2 import DictLoader, Environment, select_autoescape

# Physics
SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_GHZ = 3.4
DEFAULT_GRID = (32, 16)  # (N_y, N_x)
DEFAULT_APERTURE_CM = (2.0, 4.0)  # (W_x, W_y)
APERTURE_PRESETS_CM = {"2x4": (2.0, 4.0), "8x16": (8.0, 16.0)}
DEFAULT_M_T = 8
DEFAULT_DELTA = 1.0
J0_TAYLOR_EPS = 1e-4
PSD_TOLERANCE = 1e-8

# Masking
DEFAULT_SENTINEL = -10.0
MASK_RATIO_BAND = (0.80, 0.95)

# Training defaults
DEFAULT_BATCH_SIZE = 32
DEFAULT_LEARNING_RATE = 5e-4
DEFAULT_ADAM_BETAS = (0.9, 0.999)
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_DROPOUT = 0.5
DEFAULT_PERTURB_GAMMA = 0.5
DEFAULT_PERTURB_MU = 0.05
DEFAULT_LOSS_BETA = 0.02
DEFAULT_SNRS_DB = (0.0, 10.0, 20.0)
DEFAULT_OBSERVED_COUNTS = (26, 51, 102, 256)

# Numerics
LAYER_NORM_EPS = 1e-6
GRN_EPS = 1e-6
LEAKY_RELU_SLOPE = 0.01
NMSE_DB_FLOOR = -100.0

# Files
SHARD_MAGIC = b"FASD"
SHARD_FORMAT_VERSION = 1
SHARD_SUFFIX = ".fasd"
MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.jsonl"
SPLIT_NAMES = ("train", "val", "test")
SEED_ENV_VAR = "FAS_CANET_SEED"

# Exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERICAL_ABORT = 4

# Basic logging setup
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s"
)

# Jinja2 template environment for HTML rendering
TEMPLATE_ENV = Environment(
    loader=DictLoader(
        {
            "nmse_report.html": dedent(
                """\
                <!DOCTYPE html>
                <html>
                <head>
                    <meta charset="utf-8">
                    <title>{{ title }}</title>
                </head>
                <body style='font-family:"Segoe UI",sans-serif; color:#2d3436; line-height:1.5;'>
                    <h2 style='margin-bottom:4px;'>{{ title }}</h2>
                    <div style='color:#636e72; margin-bottom:12px;'>
                        grid {{ grid }} &middot; M_t {{ m_t }} &middot; config {{ config_hash }}
                    </div>
                    {% for table in tables %}
                    <h3 style='margin:16px 0 6px 0;'>{{ table.label }}</h3>
                    <table style='border-collapse:collapse;'>
                        <tr>
                            <th style='padding:4px 12px; border-bottom:1px solid #dfe6e9;'>observed ports</th>
                            {% for snr in snrs %}
                            <th style='padding:4px 12px; border-bottom:1px solid #dfe6e9;'>{{ snr }} dB</th>
                            {% endfor %}
                        </tr>
                        {% for row in table.rows %}
                        <tr>
                            <td style='padding:4px 12px;'>{{ row.observed_count }}</td>
                            {% for cell in row.cells %}
                            <td style='padding:4px 12px; text-align:right;'>{{ cell }}</td>
                            {% endfor %}
                        </tr>
                        {% endfor %}
                    </table>
                    {% endfor %}
                    {% if figure %}
                    <img src="{{ figure | e }}" alt="NMSE versus observed ports" style='margin-top:16px; max-width:640px;'>
                    {% endif %}
                </body>
                </html>
                """
            ),
        }
    ),
    autoescape=select_autoescape(["html", "xml"]),
    trim_blocks=True,
    lstrip_blocks=True,
)

NMSE_REPORT_TEMPLATE = TEMPLATE_ENV.get_template("nmse_report.html")
