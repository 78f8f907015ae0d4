"""Writes the 250-record oai_dc corpus into oai_dc/ (two files of 125) and
the file-harvest fixtures into files/.

Deterministic. Every record maps, every date parses, every language and
place resolves, so a run over it reports no failures. Records 0-99 carry
three subject values after shredding, the rest two: 600 in total. Records
0-9 carry a dc:date; coverage supplies dates and places elsewhere.
"""

import os
from xml.sax.saxutils import escape

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "oai_dc")

TOPICS = [
    "Railroads", "Agriculture", "Cotton", "Rivers", "Bridges", "Churches",
    "Schools", "Mills", "Parades", "Harbors", "Farms", "Courthouses",
    "Floods", "Fairs", "Mining", "Lumber", "Streetcars", "Markets",
]
PLACES = [
    "Charlotte (NC)", "Wisconsin", "Chicago (IL)", "Denver (CO)", "Texas",
    "Atlanta, Georgia", "Boston (MA)", "Iowa", "Detroit (MI)", "Montana",
]
TYPES = ["Image", "photograph", "Text", "map", "StillImage", "Sound"]
LANGS = ["English", "eng", "en", "Spanish", "spa", "French"]
DATES = [
    "1850", "1901-04-12", "1920s", "circa 1875", "1861-1865",
    "March 1899", "May 4, 1912", "1930-01-01/1930-06-30", "ca. 1900", "1948-07",
]


def record(i):
    local = f"oai:demo.example.org:item{i:04d}"
    el = []

    def dc(name, value):
        el.append(f"      <dc:{name}>{escape(value)}</dc:{name}>")

    title = f"View of {TOPICS[i % len(TOPICS)].lower()} no. {i}"
    dc("title", title + (" ;" if i % 7 == 0 else ""))
    dc("creator", f"Photographer {i % 13}")
    n = 3 if i < 100 else 2
    subjects = [TOPICS[(i + k * 5) % len(TOPICS)] for k in range(n)]
    if i % 4 == 0:
        dc("subject", "; ".join(subjects[:2]))
        for s in subjects[2:]:
            dc("subject", s)
    else:
        for s in subjects:
            dc("subject", s + ("  " if i % 5 == 0 else ""))
    dc("description", f"Item {i} from the demo collection.")
    dc("publisher", "Demo Library")
    if i < 10:
        dc("date", DATES[i])
    dc("type", TYPES[i % len(TYPES)])
    dc("format", "image/jpeg")
    dc("identifier", f"https://demo.example.org/item/{i:04d}")
    dc("identifier", f"item{i:04d}")
    dc("language", LANGS[i % len(LANGS)])
    dc("rights", "No known copyright restrictions.")
    dc("coverage", PLACES[i % len(PLACES)])
    if i % 3 == 0:
        dc("coverage", "1863")
    if i % 10 == 5:
        dc("coverage", "Boston, 1850")
    body = "\n".join(el)
    return f"""  <record>
    <header>
      <identifier>{local}</identifier>
      <datestamp>2024-01-{1 + i % 28:02d}</datestamp>
      <setSpec>{"photos" if i % 2 == 0 else "documents"}</setSpec>
    </header>
    <metadata>
      <oai_dc:dc xmlns:oai_dc="http://www.openarchives.org/OAI/2.0/oai_dc/"
          xmlns:dc="http://purl.org/dc/elements/1.1/">
{body}
      </oai_dc:dc>
    </metadata>
  </record>"""


DC_NS = ('xmlns:oai_dc="http://www.openarchives.org/OAI/2.0/oai_dc/" '
         'xmlns:dc="http://purl.org/dc/elements/1.1/"')


def file_record(i, with_id=True):
    ident = (f"\n    <dc:identifier>file{i:03d}</dc:identifier>"
             f"\n    <dc:identifier>https://files.example.org/item/{i:03d}</dc:identifier>") if with_id else ""
    return f"""<oai_dc:dc {DC_NS}>
    <dc:title>Letter {i}</dc:title>{ident}
    <dc:subject>Correspondence</dc:subject>
    <dc:date>{1880 + i}</dc:date>
    <dc:type>letter</dc:type>
    <dc:language>eng</dc:language>
    <dc:rights>Public domain.</dc:rights>
    <dc:coverage>{PLACES[i % len(PLACES)]}</dc:coverage>
  </oai_dc:dc>"""


def write_files():
    single = os.path.join(HERE, "files", "single")
    os.makedirs(single, exist_ok=True)
    for i in range(10):
        with open(os.path.join(single, f"letter-{i:03d}.xml"), "w", encoding="utf-8") as f:
            f.write('<?xml version="1.0" encoding="UTF-8"?>\n' + file_record(i).replace("\n  ", "\n") + "\n")
    container = os.path.join(HERE, "files", "container")
    os.makedirs(container, exist_ok=True)
    recs = "\n  ".join(file_record(100 + i, with_id=(i != 2)) for i in range(5))
    with open(os.path.join(container, "batch.xml"), "w", encoding="utf-8") as f:
        f.write(f'<?xml version="1.0" encoding="UTF-8"?>\n<batch>\n  {recs}\n</batch>\n')


def main():
    write_files()
    os.makedirs(OUT, exist_ok=True)
    for part, lo in enumerate((0, 125)):
        recs = "\n".join(record(i) for i in range(lo, lo + 125))
        xml = f"""<?xml version="1.0" encoding="UTF-8"?>
<records xmlns="http://www.openarchives.org/OAI/2.0/">
{recs}
</records>
"""
        with open(os.path.join(OUT, f"part-{part + 1}.xml"), "w", encoding="utf-8") as f:
            f.write(xml)


if __name__ == "__main__":
    main()
