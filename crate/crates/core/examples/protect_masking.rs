//! Masks code, math, URLs and glossary terms before translation.

use gemforge::protect::{mask, segment, unmask, TermGlossary};

const MESSAGE: &str = "Use the Python `sorted` function, which runs in $O(n \\log n)$ time:

```python
# sort the scores in place
scores.sort()
```

See https://docs.python.org/3/howto/sorting.html for details.";

fn main() {
    let glossary = TermGlossary::default_glossary();
    let segments = segment(MESSAGE, &glossary);
    for seg in &segments {
        println!("{:<18} {:?}", format!("{:?}", seg.kind), seg.text);
    }
    let masked = mask(&segments);
    println!("\ntemplate:\n{}\n", masked.template);
    // a translator would rewrite only the text between placeholders
    let translated = masked.template.replace("Use the", "استعمل").replace("time", "وقت");
    println!("restored:\n{}", unmask(&masked, &translated).unwrap());
}
