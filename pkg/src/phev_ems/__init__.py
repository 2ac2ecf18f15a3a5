"""Energy management workbench for a series-parallel plug-in hybrid."""
