"""Regenerate the bundled pseudo-methane property table from its analytic definition."""

from coolrom.fluidprops import BUNDLED_TABLE, make_pseudo_fluid, save_table

if __name__ == "__main__":
    table = make_pseudo_fluid()
    save_table(table, BUNDLED_TABLE)
    print(f"wrote {BUNDLED_TABLE} ({table.shape[0]}x{table.shape[1]} nodes)")
