"""
Main entry point for the Stream Cache experiments

    python main.py cache-rollout --steps 1000 --seed 0
    python main.py pipeline --config data/config/pipeline_table.yaml --format csv
    python main.py episode --trace data/traces/ten_hits.csv --hp 10 --expect-terminal
    python main.py check
    python main.py serve
"""

from src.stream_cache.cli import main

if __name__ == "__main__":
    main()
