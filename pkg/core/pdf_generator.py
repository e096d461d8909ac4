import io
import json

from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

MAX_TABLE_ROWS = 40


def _flatten(values, prefix=""):
    """Nested config dict -> [(dotted key, value)], `_doc` entries skipped"""
    rows = []
    for key, value in values.items():
        if key.startswith("_"):
            continue
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, dotted + "."))
        else:
            rows.append((dotted, value))
    return rows


class RunReportGenerator:
    @staticmethod
    def create_run_pdf(manifest, table=None):
        """Generate a PDF summary of one run from its manifest and result table"""
        buffer = io.BytesIO()
        doc = SimpleDocTemplate(buffer, pagesize=letter)
        styles = getSampleStyleSheet()
        story = []

        # Title
        title_style = ParagraphStyle(
            'RunTitle',
            parent=styles['Heading1'],
            fontSize=16,
            spaceAfter=30,
            textColor=colors.black
        )
        story.append(Paragraph(f"nvsim run: {manifest.get('command', 'N/A')}", title_style))

        # Run section
        story.append(Paragraph("<b>Run:</b>", styles['Heading2']))
        sections = [
            ("Version", manifest.get('version', 'N/A')),
            ("Seed", manifest.get('seed', 'N/A')),
            ("Shots per point", manifest.get('n_shots', 'N/A')),
            ("Output", manifest.get('output', 'N/A')),
            ("Arguments", json.dumps(manifest.get('args', {}), sort_keys=True)),
        ]
        for section_title, content in sections:
            story.append(Paragraph(f"<b>{section_title}:</b> {content}", styles['Normal']))
            story.append(Spacer(1, 6))

        # Configuration
        story.append(Paragraph("<b>Configuration:</b>", styles['Heading2']))
        for label, value in _flatten(manifest.get('config', {})):
            story.append(Paragraph(f"<b>{label}:</b> {value}", styles['Normal']))
        story.append(Spacer(1, 12))

        # Results
        if table is not None and len(table):
            story.append(Paragraph("<b>Results:</b>", styles['Heading2']))
            shown = table.head(MAX_TABLE_ROWS)
            data = [list(shown.columns)] + [
                [f"{v:.6g}" if isinstance(v, float) else str(v) for v in row]
                for row in shown.itertuples(index=False)
            ]
            grid = Table(data, repeatRows=1)
            grid.setStyle(TableStyle([
                ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
                ('GRID', (0, 0), (-1, -1), 0.25, colors.grey),
                ('FONTSIZE', (0, 0), (-1, -1), 7),
            ]))
            story.append(grid)
            if len(table) > MAX_TABLE_ROWS:
                story.append(Paragraph(f"... {len(table) - MAX_TABLE_ROWS} more rows", styles['Normal']))

        doc.build(story)
        buffer.seek(0)
        return buffer
