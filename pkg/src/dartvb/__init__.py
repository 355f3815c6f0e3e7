"""DART spike forecasting and impact-aware virtual bid sizing."""
