import csv
from pathlib import Path

from prettytable import PrettyTable


class Table:
    def __init__(self, header: list):
        self.header = header
        self.rows = []

    def add_row(self, row: list):
        assert len(row) == len(self.header), "row and header length mismatch"
        self.rows.append(row)

    def render(self) -> str:
        table = PrettyTable()
        table.field_names = self.header
        for row in self.rows:
            table.add_row(row)
        return table.get_string()

    def pretty_print(self):
        print(self.render())

    def output_csv(self, output_file):
        Path(output_file).parent.mkdir(parents=True, exist_ok=True)
        with open(output_file, "w", newline='', encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(self.header)
            for row in self.rows:
                writer.writerow(row)
