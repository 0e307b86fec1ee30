"""Shared observability instances using AWS Lambda Powertools."""

from aws_lambda_powertools import Logger

# Logger reads POWERTOOLS_SERVICE_NAME and POWERTOOLS_LOG_LEVEL from environment
# Outputs structured JSON by default, readable text when POWERTOOLS_DEV=true
logger = Logger(service="emim-lab")

__all__ = ["logger"]
