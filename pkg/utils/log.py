class Logger(object):
    def __init__(self, filename, echo=True):
        self.file = filename
        self.echo = echo
        with open(self.file, 'w') as f:
            f.write("")

    def log(self, content):
        if self.echo:
            print(content)
        with open(self.file, 'a') as f:
            f.write(content + '\n')

    def warn(self, content):
        self.log(f"[Warning] {content}")
